//! CSV, JSON and bar-chart outputs of an [`EvalReport`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::EvalReport;
use crate::error::{Error, Result};

/// `%.6g`: six significant digits, trailing zeros dropped, exponent form
/// outside `[1e-5, 1e6)`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = format!("{x:.5e}");
    let (mantissa, e) = exp.split_once('e').expect("exponent form");
    let e: i32 = e.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&e) {
        trim(&format!("{x:.*}", (5 - e).max(0) as usize))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if e < 0 { '-' } else { '+' }, e.abs())
    }
}

pub fn to_csv(report: &EvalReport) -> String {
    let mut out = String::from("model,composition,train_mean,train_std,test_mean,test_std\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.model,
            c.composition,
            sig6(c.train_mean),
            sig6(c.train_std),
            sig6(c.test_mean),
            sig6(c.test_std)
        );
    }
    out
}

pub fn to_json(report: &EvalReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::State(format!("cannot serialise report: {e}")))
}

/// Bar-chart data: one row per model, composition and facet (train or
/// test), with the sample std as the error bar.
pub fn plot_data(report: &EvalReport) -> String {
    let mut out = String::from("model,composition,facet,mean,std\n");
    for c in &report.cells {
        let _ = writeln!(out, "{},{},train,{},{}", c.model, c.composition, sig6(c.train_mean), sig6(c.train_std));
        let _ = writeln!(out, "{},{},test,{},{}", c.model, c.composition, sig6(c.test_mean), sig6(c.test_std));
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report.csv`, `report.json` and `plotdata.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(vec![
        write(dir.join("report.csv"), &to_csv(report))?,
        write(dir.join("report.json"), &to_json(report)?)?,
        write(dir.join("plotdata.csv"), &plot_data(report))?,
    ])
}

/// Reads a `report.json` written by [`write_report`].
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(2.0 / 3.0), "0.666667");
        assert_eq!(sig6(0.7333333333), "0.733333");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e+06");
        assert_eq!(sig6(0.000012345678), "1.23457e-05");
        assert_eq!(sig6(0.00012345678), "0.000123457");
        assert_eq!(sig6(-0.25), "-0.25");
        assert_eq!(sig6(0.9999996), "1");
    }
}
