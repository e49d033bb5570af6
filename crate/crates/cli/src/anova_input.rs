//! ANOVA input tables: long (`model,run_index,metric,value`) or summary (`model,n,mean,sd`).

use std::path::Path;

use seiv3::eval::{anova_raw, anova_summary, AnovaResult};
use seiv3::{Error, Result};

const LONG_HEADER: [&str; 4] = ["model", "run_index", "metric", "value"];
const SUMMARY_HEADER: [&str; 4] = ["model", "n", "mean", "sd"];

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = rec.get(i).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Csv {
        line,
        reason: format!("cannot parse `{raw}` in column {}", i + 1),
    })
}

fn push_group<T>(groups: &mut Vec<(String, T)>, name: &str, make: impl FnOnce() -> T) -> usize {
    match groups.iter().position(|(n, _)| n == name) {
        Some(i) => i,
        None => {
            groups.push((name.to_string(), make()));
            groups.len() - 1
        }
    }
}

/// Runs the test on the table at `path`. Groups keep their first-appearance order.
/// `metric` selects rows of a long table and must be given when it holds several.
pub fn anova_from_csv(path: &Path, metric: Option<&str>) -> Result<(Vec<String>, AnovaResult)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let records: Vec<(u64, csv::StringRecord)> = rdr
        .records()
        .enumerate()
        .map(|(i, r)| r.map(|r| (i as u64 + 2, r)).map_err(Error::from))
        .collect::<Result<_>>()?;

    if header == LONG_HEADER {
        let mut metrics: Vec<String> = Vec::new();
        for (_, r) in &records {
            if !metrics.iter().any(|m| m == &r[2]) {
                metrics.push(r[2].to_string());
            }
        }
        let chosen = match metric {
            Some(m) if metrics.iter().any(|x| x == m) => m.to_string(),
            Some(m) => {
                return Err(Error::Config {
                    field: "metric".into(),
                    reason: format!("no rows for `{m}`; the table has {}", metrics.join(", ")),
                })
            }
            None if metrics.len() == 1 => metrics[0].clone(),
            None => {
                return Err(Error::Config {
                    field: "metric".into(),
                    reason: format!("the table holds several metrics ({}); choose one", metrics.join(", ")),
                })
            }
        };
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for (line, r) in &records {
            if r[2] != *chosen {
                continue;
            }
            let value: f64 = field(r, 3, *line)?;
            let i = push_group(&mut groups, &r[0], Vec::new);
            groups[i].1.push(value);
        }
        let (names, values): (Vec<String>, Vec<Vec<f64>>) = groups.into_iter().unzip();
        return Ok((names, anova_raw(&values)?));
    }

    if header == SUMMARY_HEADER {
        if metric.is_some() {
            log::warn!("summary tables hold a single metric; --metric ignored");
        }
        let (mut names, mut ns, mut means, mut sds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (line, r) in &records {
            names.push(r[0].to_string());
            ns.push(field::<usize>(r, 1, *line)?);
            means.push(field::<f64>(r, 2, *line)?);
            sds.push(field::<f64>(r, 3, *line)?);
        }
        return Ok((names, anova_summary(&means, &sds, &ns)?));
    }

    Err(Error::Csv {
        line: 1,
        reason: format!(
            "expected header `{}` or `{}`",
            LONG_HEADER.join(","),
            SUMMARY_HEADER.join(",")
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_and_summary_agree() {
        let dir = tempfile::tempdir().unwrap();
        let long = dir.path().join("long.csv");
        let mut text = String::from("model,run_index,metric,value\n");
        for (g, vals) in [("a", [1.0, 2.0, 3.0]), ("b", [2.0, 3.0, 4.0]), ("c", [3.0, 4.0, 5.0])] {
            for (i, v) in vals.iter().enumerate() {
                text += &format!("{g},{i},accuracy,{v}\n{g},{i},loss,{}\n", 10.0 - v);
            }
        }
        std::fs::write(&long, text).unwrap();
        let (names, res) = anova_from_csv(&long, Some("accuracy")).unwrap();
        assert_eq!(names, ["a", "b", "c"]);
        assert!((res.f - 3.0).abs() < 1e-12);
        assert!(matches!(anova_from_csv(&long, None), Err(Error::Config { .. })));

        let summary = dir.path().join("summary.csv");
        std::fs::write(&summary, "model,n,mean,sd\na,3,2,1\nb,3,3,1\nc,3,4,1\n").unwrap();
        let (_, res2) = anova_from_csv(&summary, None).unwrap();
        assert!((res2.f - res.f).abs() < 1e-12);
    }

    #[test]
    fn bad_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "model,n,mean,sd\na,3,2,1\nb,three,3,1\n").unwrap();
        match anova_from_csv(&p, None) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
