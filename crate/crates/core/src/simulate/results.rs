use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub method: String,
    #[serde(rename = "T_or_param")]
    pub t_or_param: String,
    pub replication: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub method: String,
    pub t_or_param: String,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub method: String,
    pub t_or_param: String,
    pub metric: String,
    pub mean: f64,
    pub n: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub records: Vec<ResultRecord>,
    pub failures: Vec<FailureRecord>,
}

impl ExperimentResults {
    pub fn extend(&mut self, other: ExperimentResults) {
        self.records.extend(other.records);
        self.failures.extend(other.failures);
    }

    /// Mean over replications of one `(method, T_or_param, metric)` cell.
    pub fn mean(&self, method: &str, t_or_param: &str, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.method == method && r.t_or_param == t_or_param && r.metric == metric)
            .map(|r| r.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn failure_count(&self, method: &str, t_or_param: &str) -> usize {
        self.failures
            .iter()
            .filter(|f| f.method == method && f.t_or_param == t_or_param)
            .count()
    }

    /// Cell means in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(String, String, String, String)> = Vec::new();
        let mut acc: BTreeMap<(String, String, String, String), (f64, usize)> = BTreeMap::new();
        for r in &self.records {
            let key = (
                r.experiment.clone(),
                r.method.clone(),
                r.t_or_param.clone(),
                r.metric.clone(),
            );
            let e = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0.0, 0)
            });
            e.0 += r.value;
            e.1 += 1;
        }
        order
            .into_iter()
            .map(|key| {
                let (sum, n) = acc[&key];
                let failures = self.failure_count(&key.1, &key.2);
                SummaryRow {
                    experiment: key.0,
                    method: key.1,
                    t_or_param: key.2,
                    metric: key.3,
                    mean: sum / n as f64,
                    n,
                    failures,
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in self.summary() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRecord>, _>>()?;
        Ok(Self {
            records,
            failures: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, rep: usize, value: f64) -> ResultRecord {
        ResultRecord {
            experiment: "x".into(),
            method: method.into(),
            t_or_param: "128".into(),
            replication: rep,
            metric: "m".into(),
            value,
        }
    }

    #[test]
    fn means_and_round_trip() {
        let res = ExperimentResults {
            records: vec![rec("ew", 0, 1.0), rec("ew", 1, 3.0), rec("mb", 0, 0.1)],
            failures: vec![FailureRecord {
                method: "mb".into(),
                t_or_param: "128".into(),
                replication: 1,
                message: "boom".into(),
            }],
        };
        assert_eq!(res.mean("ew", "128", "m"), Some(2.0));
        assert_eq!(res.mean("glasso", "128", "m"), None);
        let s = res.summary();
        assert_eq!(s.len(), 2);
        assert_eq!((s[1].n, s[1].failures), (1, 1));
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("experiment,method,T_or_param,replication,metric,value\n"));
        assert_eq!(
            ExperimentResults::read_csv(buf.as_slice()).unwrap().records,
            res.records
        );
    }
}
