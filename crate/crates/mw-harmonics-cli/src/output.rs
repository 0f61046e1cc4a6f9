//! CSV and JSON reports.

use std::path::Path;

use mw_harmonics::geometry::Cube;
use serde::Serialize;

use crate::CliError;

/// Decimal rendering with 12 significant digits; `inf`, `-inf` and `nan` spelled out.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let e: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&e) {
        trim_fraction(format!("{:.*}", (11 - e) as usize, x))
    } else {
        format!("{}e{}", trim_fraction(mant.to_string()), e)
    }
}

fn trim_fraction(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(";")
}

pub fn cube_columns(q: &Cube) -> [String; 2] {
    let corner: Vec<f64> = q.corner().iter().map(mw_harmonics::geometry::to_f64).collect();
    [fmt_list(&corner), fmt_num(q.side_f64())]
}

/// One table plus a JSON summary.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    /// Invariants that failed; a nonempty list gives exit code 2.
    pub violations: Vec<String>,
}

impl Report {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Report { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn violate(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }

    pub fn csv_string(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn json_value(&self) -> serde_json::Value {
        let mut m = self.summary.clone();
        m.insert("command".into(), self.name.clone().into());
        m.insert("rows".into(), self.rows.len().into());
        m.insert("violations".into(), self.violations.clone().into());
        serde_json::Value::Object(m)
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let stem = self.name.replace('-', "_");
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.csv_string()?).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
        let json_path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.json_value()).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&json_path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))
    }
}

/// Finite numbers stay numbers, the rest become `"inf"`, `"-inf"`, `"nan"`.
pub fn json_num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        fmt_num(x).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(2.125), "2.125");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(fmt_num(123456.7890123456), "123456.789012");
        assert_eq!(fmt_num(9.9999999999999), "10");
        assert_eq!(fmt_num(1e-7), "1e-7");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(0.0), "0");
    }

    #[test]
    fn csv_has_fixed_header() {
        let mut r = Report::new("x", &["a", "b"]);
        r.row(vec!["1".into(), "2".into()]);
        assert_eq!(r.csv_string().unwrap(), "a,b\n1,2\n");
    }
}
