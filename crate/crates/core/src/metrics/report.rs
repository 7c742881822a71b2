use serde::{Deserialize, Serialize};

/// One line of a metric report: a case, a class and optionally one sample.
///
/// Per-sample records carry overlap and boundary metrics; per-case records
/// (`sample == None`) additionally carry the distribution metrics.
/// `None` marks a metric that is undefined or not computed for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub case_id: String,
    pub class_id: u8,
    pub sample: Option<usize>,
    pub dice: Option<f64>,
    pub hd: Option<f64>,
    pub hd95: Option<f64>,
    pub ged2: Option<f64>,
    pub ncc: Option<f64>,
}

impl MetricRecord {
    pub fn new(case_id: impl Into<String>, class_id: u8, sample: Option<usize>) -> Self {
        Self {
            case_id: case_id.into(),
            class_id,
            sample,
            dice: None,
            hd: None,
            hd95: None,
            ged2: None,
            ncc: None,
        }
    }
}

/// Mean and population variance of the defined values, with the number of
/// records where the metric was undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
    pub undefined: usize,
}

impl Aggregate {
    pub fn from_values<I: IntoIterator<Item = Option<f64>>>(values: I) -> Self {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(x) => defined.push(x),
                None => undefined += 1,
            }
        }
        let n = defined.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                count: 0,
                undefined,
            };
        }
        let mean = defined.iter().sum::<f64>() / n as f64;
        let variance = defined.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        Self {
            mean,
            variance,
            count: n,
            undefined,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_skips_undefined() {
        let a = Aggregate::from_values([Some(1.0), None, Some(3.0)]);
        assert_eq!(a.mean, 2.0);
        assert_eq!(a.variance, 1.0);
        assert_eq!((a.count, a.undefined), (2, 1));
        let e = Aggregate::from_values([None]);
        assert!(e.mean.is_nan());
    }
}
