//! Ablation curves: replace the top-attributed features with imputation
//! values one at a time and track the mean model output.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_ir::Pipeline;
use crate::numeric::mean;

/// Which attributions are eligible for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationSign {
    /// Features with positive attribution, largest first.
    Positive,
    /// Features with negative attribution, most negative first.
    Negative,
    /// Every feature, largest attribution first.
    All,
}

impl AblationSign {
    pub fn tag(self) -> &'static str {
        match self {
            AblationSign::Positive => "positive",
            AblationSign::Negative => "negative",
            AblationSign::All => "all",
        }
    }
}

impl fmt::Display for AblationSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AblationSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" | "positive" => Ok(AblationSign::Positive),
            "neg" | "negative" => Ok(AblationSign::Negative),
            "all" => Ok(AblationSign::All),
            other => Err(Error::UnknownTag {
                kind: "ablation sign",
                tag: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub sign: AblationSign,
    /// Mean model output after ablating `k` features, for `k = 0..=k_max`.
    pub mean_output: Vec<f64>,
    /// `ablated[k][r]`: features actually replaced in row `r` at step `k`.
    pub ablated: Vec<Vec<usize>>,
}

impl AblationCurve {
    pub fn k_max(&self) -> usize {
        self.mean_output.len() - 1
    }

    /// Columns `k,mean_output,sign`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["k", "mean_output", "sign"])?;
        for (k, v) in self.mean_output.iter().enumerate() {
            w.write_record([k.to_string(), v.to_string(), self.sign.tag().to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Feature indices of one row in ablation order. Ties keep the lower index first.
pub fn ablation_order(phi: &[f64], sign: AblationSign) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phi.len())
        .filter(|&i| match sign {
            AblationSign::Positive => phi[i] > 0.0,
            AblationSign::Negative => phi[i] < 0.0,
            AblationSign::All => true,
        })
        .collect();
    match sign {
        AblationSign::Negative => order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b])),
        _ => order.sort_by(|&a, &b| phi[b].total_cmp(&phi[a])),
    }
    order
}

/// Row with its first `k` eligible features (or all of them, if fewer)
/// replaced by `impute`.
pub fn ablate_row(x: &[f64], order: &[usize], impute: &[f64], k: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for &i in order.iter().take(k) {
        out[i] = impute[i];
    }
    out
}

pub fn ablation_curve(
    pipeline: &Pipeline,
    explicands: &[Vec<f64>],
    labels: Option<&[f64]>,
    phi: &[Vec<f64>],
    impute: &[f64],
    sign: AblationSign,
    k_max: usize,
) -> Result<AblationCurve> {
    let m = pipeline.input_width();
    if explicands.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one explicand".into(),
        ));
    }
    if phi.len() != explicands.len() {
        return Err(Error::width(
            "attribution rows",
            explicands.len(),
            phi.len(),
        ));
    }
    if let Some(l) = labels {
        if l.len() != explicands.len() {
            return Err(Error::width("labels", explicands.len(), l.len()));
        }
    }
    if impute.len() != m {
        return Err(Error::width("imputation vector", m, impute.len()));
    }
    for (r, (x, p)) in explicands.iter().zip(phi).enumerate() {
        if x.len() != m {
            return Err(Error::width(format!("explicand {r}"), m, x.len()));
        }
        if p.len() != m {
            return Err(Error::width(format!("attribution row {r}"), m, p.len()));
        }
    }
    if k_max > m {
        return Err(Error::OutOfRange {
            what: "k_max",
            value: k_max,
            range: format!("0..={m}"),
        });
    }

    let orders: Vec<Vec<usize>> = phi.iter().map(|p| ablation_order(p, sign)).collect();
    let mut mean_output = Vec::with_capacity(k_max + 1);
    let mut ablated = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let outputs = explicands
            .par_iter()
            .zip(&orders)
            .enumerate()
            .map(|(r, (x, order))| {
                let label = labels.map(|l| l[r]);
                pipeline.predict(&ablate_row(x, order, impute, k), label)
            })
            .collect::<Result<Vec<f64>>>()?;
        mean_output.push(mean(&outputs));
        ablated.push(orders.iter().map(|o| o.len().min(k)).collect());
    }
    Ok(AblationCurve {
        sign,
        mean_output,
        ablated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::fixtures::linear;

    fn affine(w: Vec<f64>) -> Pipeline {
        Pipeline::new(vec![linear(vec![w], vec![0.0])]).unwrap()
    }

    #[test]
    fn linear_positive_curve() {
        let p = affine(vec![2.0, 1.0]);
        let c = ablation_curve(
            &p,
            &[vec![1.0, 1.0]],
            None,
            &[vec![2.0, 1.0]],
            &[0.0, 0.0],
            AblationSign::Positive,
            2,
        )
        .unwrap();
        assert_eq!(c.mean_output, vec![3.0, 1.0, 0.0]);
    }

    #[test]
    fn negative_sign_with_positive_attributions_is_flat() {
        let p = affine(vec![2.0, 1.0]);
        let c = ablation_curve(
            &p,
            &[vec![1.0, 1.0]],
            None,
            &[vec![2.0, 1.0]],
            &[0.0, 0.0],
            AblationSign::Negative,
            2,
        )
        .unwrap();
        assert_eq!(c.mean_output, vec![3.0, 3.0, 3.0]);
        assert_eq!(c.ablated[2], vec![0]);
    }

    #[test]
    fn two_rows_one_step() {
        let p = affine(vec![1.0, 1.0]);
        let c = ablation_curve(
            &p,
            &[vec![1.0, 1.0], vec![1.0, 1.0]],
            None,
            &[vec![2.0, 1.0], vec![1.0, 2.0]],
            &[0.0, 0.0],
            AblationSign::Positive,
            1,
        )
        .unwrap();
        assert_eq!(c.mean_output, vec![2.0, 1.0]);
    }

    #[test]
    fn ordering_and_ties() {
        assert_eq!(
            ablation_order(&[1.0, 3.0, 3.0, -2.0], AblationSign::Positive),
            vec![1, 2, 0]
        );
        assert_eq!(
            ablation_order(&[1.0, -3.0, -3.0, -2.0], AblationSign::Negative),
            vec![1, 2, 3]
        );
        assert_eq!(
            ablation_order(&[0.0, -1.0, 2.0], AblationSign::All),
            vec![2, 0, 1]
        );
    }

    #[test]
    fn full_replacement_reaches_imputed_output() {
        let p = affine(vec![1.5, -2.0, 0.5]);
        let impute = [0.3, -0.2, 1.0];
        let c = ablation_curve(
            &p,
            &[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]],
            None,
            &[vec![0.0, -1.0, 2.0], vec![1.0, 1.0, 1.0]],
            &impute,
            AblationSign::All,
            3,
        )
        .unwrap();
        assert_eq!(c.mean_output[3], p.predict(&impute, None).unwrap());
    }

    #[test]
    fn shape_errors() {
        let p = affine(vec![1.0, 1.0]);
        let x = [vec![1.0, 1.0]];
        assert!(ablation_curve(
            &p,
            &x,
            None,
            &[vec![1.0]],
            &[0.0, 0.0],
            AblationSign::Positive,
            1
        )
        .is_err());
        assert!(ablation_curve(
            &p,
            &x,
            None,
            &[vec![1.0, 1.0]],
            &[0.0, 0.0],
            AblationSign::Positive,
            3
        )
        .is_err());
    }

    #[test]
    fn csv_layout() {
        let c = AblationCurve {
            sign: AblationSign::Positive,
            mean_output: vec![3.0, 1.5],
            ablated: vec![vec![0], vec![1]],
        };
        assert_eq!(
            c.to_csv().unwrap(),
            "k,mean_output,sign\n0,3,positive\n1,1.5,positive\n"
        );
        assert_eq!(
            "neg".parse::<AblationSign>().unwrap(),
            AblationSign::Negative
        );
    }
}
