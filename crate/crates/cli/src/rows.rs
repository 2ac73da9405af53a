//! Result rows and the CSV contract.
//!
//! Schema: `experiment,param_m,param_d,param_k,activation,metric,value,seed,elapsed_s`
//! with floats at 17 significant digits. Rows are sorted by the canonical
//! key (everything except value and elapsed) before writing, so reruns with
//! the same seed produce byte-identical files modulo the elapsed column.

use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct ResultRow {
    pub experiment: String,
    pub param_m: usize,
    pub param_d: usize,
    pub param_k: usize,
    pub activation: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub elapsed_s: f64,
}

impl ResultRow {
    pub fn new(
        experiment: &str,
        (param_m, param_d, param_k): (usize, usize, usize),
        activation: &str,
        metric: &str,
        value: f64,
        seed: u64,
        elapsed_s: f64,
    ) -> Self {
        assert!(value.is_finite(), "metric {metric} produced non-finite value");
        Self {
            experiment: experiment.into(),
            param_m,
            param_d,
            param_k,
            activation: activation.into(),
            metric: metric.into(),
            value,
            seed,
            elapsed_s,
        }
    }

    fn key(&self) -> (String, usize, usize, usize, String, String, u64) {
        (
            self.experiment.clone(),
            self.param_m,
            self.param_d,
            self.param_k,
            self.activation.clone(),
            self.metric.clone(),
            self.seed,
        )
    }
}

/// 17 significant digits, locale-free.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> std::io::Result<()> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.key());
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "experiment,param_m,param_d,param_k,activation,metric,value,seed,elapsed_s"
    )?;
    for r in sorted {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.param_m,
            r.param_d,
            r.param_k,
            r.activation,
            r.metric,
            fmt_float(r.value),
            r.seed,
            fmt_float(r.elapsed_s)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_has_17_significant_digits() {
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
        assert_eq!(fmt_float(1.0 / 3.0), "3.3333333333333331e-1");
        let v: f64 = 0.1 + 0.2;
        let parsed: f64 = fmt_float(v).parse().unwrap();
        assert_eq!(parsed, v);
    }

    #[test]
    fn rows_sort_canonically() {
        let dir = std::env::temp_dir().join("galu-rows-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        let rows = vec![
            ResultRow::new("b", (1, 1, 2), "galu", "mse", 0.5, 3, 0.1),
            ResultRow::new("a", (1, 1, 1), "galu", "mse", 0.25, 2, 0.2),
            ResultRow::new("a", (1, 1, 1), "galu", "mse", 0.125, 1, 0.3),
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("a,1,1,1,galu,mse,1.25"));
        assert!(lines[2].starts_with("a,1,1,1,galu,mse,2.5"));
        assert!(lines[3].starts_with("b,"));
    }
}
