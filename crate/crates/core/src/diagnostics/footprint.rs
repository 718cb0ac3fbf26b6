use serde::{Deserialize, Serialize};

use crate::{ForgeError, Result};

/// Training FLOPs as `6 * params * tokens`.
pub fn flops_estimate(params: f64, tokens: f64) -> Result<f64> {
    if !(params.is_finite() && tokens.is_finite() && params >= 0.0 && tokens >= 0.0) {
        return Err(ForgeError::validation(
            "params and tokens must be finite and non-negative",
        ));
    }
    Ok(6.0 * params * tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootprintInput {
    pub gpu_power_mwh: f64,
    pub pue: f64,
    pub carbon_intensity_kg_per_kwh: f64,
    #[serde(default)]
    pub wue_onsite_l_per_kwh: f64,
    #[serde(default)]
    pub wue_offsite_l_per_kwh: f64,
}

impl FootprintInput {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gpu_power_mwh", self.gpu_power_mwh),
            ("pue", self.pue),
            (
                "carbon_intensity_kg_per_kwh",
                self.carbon_intensity_kg_per_kwh,
            ),
            ("wue_onsite_l_per_kwh", self.wue_onsite_l_per_kwh),
            ("wue_offsite_l_per_kwh", self.wue_offsite_l_per_kwh),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ForgeError::validation(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.pue < 1.0 {
            return Err(ForgeError::validation(format!(
                "pue must be at least 1, got {}",
                self.pue
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub co2_tonnes: f64,
    pub water_kl: f64,
}

/// Emissions and water use from GPU energy, datacenter overhead, grid carbon
/// intensity and water-usage effectiveness.
pub fn footprint(input: &FootprintInput) -> Result<Footprint> {
    input.validate()?;
    let kwh = input.gpu_power_mwh * 1000.0 * input.pue;
    Ok(Footprint {
        co2_tonnes: kwh * input.carbon_intensity_kg_per_kwh / 1000.0,
        water_kl: kwh * (input.wue_onsite_l_per_kwh + input.wue_offsite_l_per_kwh) / 1000.0,
    })
}
