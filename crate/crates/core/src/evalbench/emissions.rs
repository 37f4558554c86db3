use crate::error::{Error, Result};

/// Training-energy carbon estimate: `gross = power · hours · intensity`,
/// `net = gross · (1 − offset)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmissionsEstimate {
    pub power_kw: f64,
    pub hours: f64,
    pub intensity_kgco2_per_kwh: f64,
    pub gross_kg: f64,
    pub offset_fraction: f64,
    pub net_kg: f64,
}

pub fn estimate_emissions(power_kw: f64, hours: f64, intensity: f64, offset_fraction: f64) -> Result<EmissionsEstimate> {
    for (name, v) in [("power_kw", power_kw), ("hours", hours), ("intensity", intensity), ("offset", offset_fraction)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Validation(format!("{name} must be a non-negative number, got {v}")));
        }
    }
    if offset_fraction > 1.0 {
        return Err(Error::Validation(format!("offset fraction {offset_fraction} exceeds 1")));
    }
    let gross_kg = power_kw * hours * intensity;
    Ok(EmissionsEstimate {
        power_kw,
        hours,
        intensity_kgco2_per_kwh: intensity,
        gross_kg,
        offset_fraction,
        net_kg: gross_kg * (1.0 - offset_fraction),
    })
}

impl EmissionsEstimate {
    /// `key<TAB>value` lines, values to four decimals.
    pub fn to_tsv(&self) -> String {
        format!(
            "power_kw\t{:.4}\nhours\t{:.4}\nintensity_kgco2_per_kwh\t{:.4}\ngross_kg\t{:.4}\noffset_fraction\t{:.4}\nnet_kg\t{:.4}\n",
            self.power_kw, self.hours, self.intensity_kgco2_per_kwh, self.gross_kg, self.offset_fraction, self.net_kg
        )
    }
}
