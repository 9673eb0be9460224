//! Run reports: per-method metrics, config echo, and the oracle-dominance
//! invariant. Serialized as TOML with a stable field order so reruns with
//! the same seed are byte-identical except for the wall-clock line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fusebench_core::image::MetricReport;
use fusebench_core::{Error, Result};

pub const REPORT_FORMAT: &str = "fusebench-report-v1";
pub const ORACLE_METHOD: &str = "oracle";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    /// "pool", "baseline" or "fusion".
    pub role: String,
    pub psnr: f64,
    pub ssim: f64,
    pub per_image: Vec<(String, f64, f64)>,
}

impl MethodReport {
    pub fn new(name: impl Into<String>, role: &str, metrics: MetricReport) -> MethodReport {
        MethodReport {
            name: name.into(),
            role: role.to_string(),
            psnr: metrics.psnr,
            ssim: metrics.ssim,
            per_image: metrics.per_image,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub command: String,
    pub variant: String,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub methods: Vec<MethodReport>,
    pub config_echo: toml::Table,
}

impl RunReport {
    pub fn new(
        command: &str,
        variant: &str,
        seed: u64,
        methods: Vec<MethodReport>,
        config_echo: toml::Table,
    ) -> RunReport {
        RunReport {
            format: REPORT_FORMAT.to_string(),
            command: command.to_string(),
            variant: variant.to_string(),
            seed,
            wall_clock_secs: 0.0,
            methods,
            config_echo,
        }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    /// The oracle upper bound must dominate every other row.
    pub fn check_oracle_dominance(&self) -> Result<()> {
        let Some(oracle) = self.method(ORACLE_METHOD) else {
            return Ok(());
        };
        for m in &self.methods {
            if m.psnr > oracle.psnr + 1e-9 {
                return Err(Error::Numerical(format!(
                    "oracle dominance violated: `{}` at {:.4} dB exceeds oracle {:.4} dB",
                    m.name, m.psnr, oracle.psnr
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let text = toml::to_string(self)
            .map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunReport> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: RunReport =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::format(path, format!("unknown format `{}`", report.format)));
        }
        Ok(report)
    }

    /// One line per method, fixed order, for terminal output.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .methods
            .iter()
            .map(|m| m.name.len())
            .max()
            .unwrap_or(4)
            .max(6);
        out.push_str(&format!("{:<name_w$}  {:>8}  {:>7}  role\n", "method", "psnr", "ssim"));
        for m in &self.methods {
            out.push_str(&format!(
                "{:<name_w$}  {:>8.3}  {:>7.4}  {}\n",
                m.name, m.psnr, m.ssim, m.role
            ));
        }
        out
    }
}

/// Compares two report files ignoring the wall-clock line.
pub fn reports_equivalent(a: impl AsRef<Path>, b: impl AsRef<Path>) -> Result<bool> {
    let strip = |p: &Path| -> Result<String> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(text
            .lines()
            .filter(|l| !l.starts_with("wall_clock_secs"))
            .collect::<Vec<_>>()
            .join("\n"))
    };
    Ok(strip(a.as_ref())? == strip(b.as_ref())?)
}
