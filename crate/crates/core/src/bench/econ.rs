//! Monthly throughput and cost estimates.

use serde::{Deserialize, Serialize};

/// Seconds in an average month: 365/12 days.
pub const SECONDS_PER_MONTH: f64 = 365.0 / 12.0 * 24.0 * 3600.0;
/// Hours in an average month.
pub const HOURS_PER_MONTH: f64 = 365.0 / 12.0 * 24.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EconError {
    #[error("calls per second must be a non-negative number, got {0}")]
    NegativeCps(f64),
    #[error("price must be a non-negative number, got {0}")]
    NegativePrice(f64),
    #[error("exactly one of pph and ppmc must be set")]
    PricingBasis,
    #[error("price per month must be positive, got {0}")]
    NonPositivePpm(f64),
}

/// How a deployment is billed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pricing {
    PerHour(f64),
    PerMillionCalls { ppmc: f64, free_tier_calls: f64 },
}

pub fn compute_cpm(cps: f64) -> Result<f64, EconError> {
    if !(cps >= 0.0) || !cps.is_finite() {
        return Err(EconError::NegativeCps(cps));
    }
    Ok(SECONDS_PER_MONTH * cps)
}

pub fn compute_ppm(pricing: Pricing, cpm: f64) -> Result<f64, EconError> {
    match pricing {
        Pricing::PerHour(pph) => {
            if !(pph >= 0.0) {
                return Err(EconError::NegativePrice(pph));
            }
            Ok(HOURS_PER_MONTH * pph)
        }
        Pricing::PerMillionCalls { ppmc, free_tier_calls } => {
            if !(ppmc >= 0.0) {
                return Err(EconError::NegativePrice(ppmc));
            }
            Ok((cpm - free_tier_calls.max(0.0)).max(0.0) * ppmc / 1e6)
        }
    }
}

pub fn compute_utility(cpm: f64, ppm: f64) -> Result<f64, EconError> {
    if !(ppm > 0.0) {
        return Err(EconError::NonPositivePpm(ppm));
    }
    Ok(cpm / (ppm * 1e6))
}

/// One line of a prices file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomicsInput {
    pub label: String,
    pub cps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppmc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_tier_calls: Option<f64>,
}

impl EconomicsInput {
    pub fn pricing(&self) -> Result<Pricing, EconError> {
        match (self.pph, self.ppmc) {
            (Some(pph), None) => Ok(Pricing::PerHour(pph)),
            (None, Some(ppmc)) => Ok(Pricing::PerMillionCalls {
                ppmc,
                free_tier_calls: self.free_tier_calls.unwrap_or(0.0),
            }),
            _ => Err(EconError::PricingBasis),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EconomicsRow {
    pub label: String,
    pub cps: f64,
    pub cpm: f64,
    pub pricing: String,
    pub ppm: f64,
    pub utility: f64,
}

pub fn economics_row(input: &EconomicsInput) -> Result<EconomicsRow, EconError> {
    let pricing = input.pricing()?;
    let cpm = compute_cpm(input.cps)?;
    let ppm = compute_ppm(pricing, cpm)?;
    let utility = compute_utility(cpm, ppm)?;
    let pricing = match pricing {
        Pricing::PerHour(p) => format!("pph: {p}"),
        Pricing::PerMillionCalls { ppmc, .. } => format!("ppmc: {ppmc}"),
    };
    Ok(EconomicsRow {
        label: input.label.clone(),
        cps: input.cps,
        cpm,
        pricing,
        ppm,
        utility,
    })
}

/// Reads a JSON array of [`EconomicsInput`].
pub fn load_prices(text: &str) -> Result<Vec<EconomicsInput>, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn format_table(rows: &[EconomicsRow]) -> String {
    let mut s = format!(
        "{:<20} {:>10} {:>14} {:>12} {:>10} {:>9}\n",
        "configuration", "cps", "est. cpm", "base price", "est. ppm", "utility"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<20} {:>10.2} {:>14.0} {:>12} {:>10.2} {:>9.2}\n",
            r.label, r.cps, r.cpm, r.pricing, r.ppm, r.utility
        ));
    }
    s
}
