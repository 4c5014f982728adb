//! Scenario constants shared by every stage of the pipeline.
//!
//! All powers are stored as linear ratios to the receiver noise power
//! `noise_psd + 10 log10(B) + noise_figure`, so the downlink noise at every UE
//! has unit variance. Large-scale fading coefficients only carry path loss and
//! shadowing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Converts a power in dB to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    /// Number of access points `M`.
    pub num_aps: usize,
    /// Number of URLLC UEs `N`.
    pub num_ues: usize,
    /// Number of NOMA clusters `G`, which is also the pilot length.
    pub num_clusters: usize,
    /// Antennas per access point `L`.
    pub antennas_per_ap: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    /// System bandwidth, Hz.
    pub bandwidth: f64,
    /// Noise power spectral density, dBm/Hz.
    pub noise_psd_dbm: f64,
    /// Receiver noise figure, dB.
    pub noise_figure_db: f64,
    /// Coherence block length in channel uses.
    pub coherence_len: usize,
    /// Target decoding error probability, applied to every UE.
    pub epsilon: f64,
    /// Normalized pilot power (linear).
    pub pilot_power: f64,
    /// Normalized maximum downlink power per AP (linear).
    pub max_dl_power: f64,
    /// Minimum rate requirement per UE, bits/s.
    pub min_rate_req: f64,
    /// Imperfect-SIC correlation coefficient `c` in `(0, 1]`.
    pub sic_coeff: f64,
    /// Shadow fading standard deviation, dB.
    pub shadow_sigma_db: f64,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SystemConfig {
    /// Full-scale scenario: 120 APs, 40 UEs, 12 antennas, 20 clusters.
    pub fn paper() -> Self {
        let mut cfg = SystemConfig {
            num_aps: 120,
            num_ues: 40,
            num_clusters: 20,
            antennas_per_ap: 12,
            area_side: 1000.0,
            bandwidth: 10e6,
            noise_psd_dbm: -174.0,
            noise_figure_db: 9.0,
            coherence_len: 200,
            epsilon: 1e-6,
            pilot_power: 0.0,
            max_dl_power: 0.0,
            min_rate_req: 1e6,
            sic_coeff: 0.5,
            shadow_sigma_db: 8.0,
            rng_seed: 0,
        };
        cfg.pilot_power = cfg.dbm_to_normalized(20.0);
        cfg.max_dl_power = cfg.dbm_to_normalized(23.0);
        cfg
    }

    /// Reduced scenario used by the test and acceptance suites.
    pub fn desk() -> Self {
        SystemConfig {
            num_aps: 20,
            num_ues: 8,
            num_clusters: 4,
            antennas_per_ap: 4,
            ..Self::paper()
        }
    }

    /// Receiver noise power in dBm.
    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_psd_dbm + 10.0 * self.bandwidth.log10() + self.noise_figure_db
    }

    /// Converts an absolute power in dBm to the noise-normalized linear scale.
    pub fn dbm_to_normalized(&self, dbm: f64) -> f64 {
        db_to_linear(dbm - self.noise_power_dbm())
    }

    pub fn normalized_to_dbm(&self, p: f64) -> f64 {
        linear_to_db(p) + self.noise_power_dbm()
    }

    pub fn pilot_len(&self) -> usize {
        self.num_clusters
    }

    pub fn data_len(&self) -> usize {
        self.coherence_len.saturating_sub(self.num_clusters)
    }

    /// Fraction of the coherence block used for downlink data.
    pub fn eta(&self) -> f64 {
        self.data_len() as f64 / self.coherence_len as f64
    }

    /// Minimum rate requirement in bits per channel use.
    pub fn min_rate_per_channel_use(&self) -> f64 {
        self.min_rate_req / self.bandwidth
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.num_aps == 0 {
            return fail("num_aps must be at least 1".into());
        }
        if self.num_ues == 0 {
            return fail("num_ues must be at least 1".into());
        }
        if self.num_clusters == 0 || self.num_clusters > self.num_ues {
            return fail(format!(
                "num_clusters must lie in 1..={} (got {})",
                self.num_ues, self.num_clusters
            ));
        }
        if self.antennas_per_ap == 0 {
            return fail("antennas_per_ap must be at least 1".into());
        }
        if self.coherence_len <= self.num_clusters {
            return fail(format!(
                "coherence_len ({}) must exceed the pilot length ({})",
                self.coherence_len, self.num_clusters
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return fail(format!("epsilon must lie in (0, 0.5], got {}", self.epsilon));
        }
        if !(self.pilot_power > 0.0 && self.pilot_power.is_finite()) {
            return fail("pilot_power must be positive".into());
        }
        if !(self.max_dl_power > 0.0 && self.max_dl_power.is_finite()) {
            return fail("max_dl_power must be positive".into());
        }
        if !(self.sic_coeff > 0.0 && self.sic_coeff <= 1.0) {
            return fail(format!("sic_coeff must lie in (0, 1], got {}", self.sic_coeff));
        }
        if !(self.area_side > 0.0 && self.area_side.is_finite()) {
            return fail("area_side must be positive".into());
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return fail("bandwidth must be positive".into());
        }
        if !(self.min_rate_req >= 0.0 && self.min_rate_req.is_finite()) {
            return fail("min_rate_req must be non-negative".into());
        }
        if !(self.shadow_sigma_db >= 0.0) {
            return fail("shadow_sigma_db must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_is_valid_and_normalized() {
        let cfg = SystemConfig::paper();
        cfg.validate().unwrap();
        assert!((cfg.noise_power_dbm() - (-95.0)).abs() < 1e-9);
        // 23 dBm against a -95 dBm noise floor.
        assert!((linear_to_db(cfg.max_dl_power) - 118.0).abs() < 1e-9);
        assert!((linear_to_db(cfg.pilot_power) - 115.0).abs() < 1e-9);
        assert_eq!(cfg.num_clusters, cfg.num_ues / 2);
        assert!((cfg.eta() - 0.9).abs() < 1e-12);
        assert!((cfg.min_rate_per_channel_use() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn desk_profile_is_valid() {
        let cfg = SystemConfig::desk();
        cfg.validate().unwrap();
        assert_eq!((cfg.num_aps, cfg.num_ues, cfg.num_clusters), (20, 8, 4));
        assert_eq!(cfg.data_len(), 196);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = SystemConfig::desk();
        let cases: Vec<Box<dyn Fn(&mut SystemConfig)>> = vec![
            Box::new(|c| c.num_aps = 0),
            Box::new(|c| c.num_clusters = 0),
            Box::new(|c| c.num_clusters = c.num_ues + 1),
            Box::new(|c| c.coherence_len = c.num_clusters),
            Box::new(|c| c.epsilon = 0.0),
            Box::new(|c| c.epsilon = 0.7),
            Box::new(|c| c.sic_coeff = 0.0),
            Box::new(|c| c.sic_coeff = 1.5),
            Box::new(|c| c.max_dl_power = -1.0),
            Box::new(|c| c.pilot_power = 0.0),
        ];
        for mutate in cases {
            let mut cfg = base.clone();
            mutate(&mut cfg);
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
