//! Fit-settings overlay from a `key=value` text file.
//!
//! Recognized keys (one per line, `#` starts a comment):
//!
//! ```text
//! iterations   = 200
//! step_size    = 0.05
//! thumbnail    = 256
//! use_dct      = true
//! seed         = 0
//! fourier_terms = 10
//! lambda_l1    = 1.0
//! lambda_ssim  = 0.1
//! lambda_fft   = 0.1
//! beta1        = 0.9
//! beta2        = 0.999
//! ```
//!
//! Values from the file are applied over the defaults; explicit command-line
//! flags win over the file.

use rja_core::fitter::FitConfig;

use crate::error::CliError;

pub fn apply_fit_config(text: &str, cfg: &mut FitConfig) -> Result<(), CliError> {
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Parse(format!("fit config line {}: expected key=value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            CliError::Parse(format!(
                "fit config line {}: bad {what} value {value:?}",
                lineno + 1
            ))
        };
        match key {
            "iterations" => cfg.iterations = value.parse().map_err(|_| bad("integer"))?,
            "step_size" => cfg.step_size = value.parse().map_err(|_| bad("float"))?,
            "thumbnail" => cfg.thumbnail = value.parse().map_err(|_| bad("integer"))?,
            "use_dct" => cfg.use_dct = value.parse().map_err(|_| bad("bool"))?,
            "seed" => cfg.rng_seed = value.parse().map_err(|_| bad("integer"))?,
            "fourier_terms" => cfg.fourier_terms = value.parse().map_err(|_| bad("integer"))?,
            "lambda_l1" => cfg.weights.l1 = value.parse().map_err(|_| bad("float"))?,
            "lambda_ssim" => cfg.weights.ssim = value.parse().map_err(|_| bad("float"))?,
            "lambda_fft" => cfg.weights.fft = value.parse().map_err(|_| bad("float"))?,
            "beta1" => cfg.moment_decays.0 = value.parse().map_err(|_| bad("float"))?,
            "beta2" => cfg.moment_decays.1 = value.parse().map_err(|_| bad("float"))?,
            other => {
                return Err(CliError::Parse(format!(
                    "fit config line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_comments() {
        let mut cfg = FitConfig::new(50);
        apply_fit_config(
            "# comment\niterations = 40\nstep_size=0.05 # inline\nuse_dct = false\n",
            &mut cfg,
        )
        .unwrap();
        assert_eq!(cfg.iterations, 40);
        assert_eq!(cfg.step_size, 0.05);
        assert!(!cfg.use_dct);
    }

    #[test]
    fn rejects_unknown_key_and_bad_value() {
        let mut cfg = FitConfig::new(50);
        assert!(apply_fit_config("bogus = 1\n", &mut cfg).is_err());
        assert!(apply_fit_config("iterations = soon\n", &mut cfg).is_err());
        assert!(apply_fit_config("iterations 40\n", &mut cfg).is_err());
    }
}
