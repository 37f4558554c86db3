// Training emissions for 12 hours on a 350 W GPU at 0.479 kgCO2eq/kWh,
// a fifth of it offset.
//
// `cargo run --example emissions`

use ttd::evalbench::{emit_report_tables, estimate_emissions, ReportBundle};

pub fn run_example() -> ttd::Result<()> {
    let e = estimate_emissions(0.350, 12.0, 0.479, 0.20)?;
    let rendered = emit_report_tables(&ReportBundle {
        emissions: Some(e),
        ..Default::default()
    })?;
    print!("{}", rendered.text);
    Ok(())
}

#[allow(dead_code)]
fn main() -> ttd::Result<()> {
    run_example()
}
