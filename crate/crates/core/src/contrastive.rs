//! "Why P not Q?" explanations from per-class attributions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_point, Error, Result};
use crate::shapley::{self, ShapleyConfig, ShapleyMatrix, ValueFunction};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ContrastiveQuery<F: Scalar = f64> {
    pub point: Vec<F>,
    pub predicted: usize,
    pub desired: usize,
}

impl<F: Scalar> ContrastiveQuery<F> {
    pub fn new(point: Vec<F>, predicted: usize, desired: usize, n_classes: usize) -> Result<Self> {
        for class in [predicted, desired] {
            if class >= n_classes {
                return Err(Error::InvalidClass { class, n_classes });
            }
        }
        if predicted == desired {
            return Err(Error::NotContrastive(desired));
        }
        Ok(Self {
            point,
            predicted,
            desired,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Attribution<F: Scalar = f64> {
    pub feature: String,
    pub index: usize,
    pub phi: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Pro,
    Anti,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ContrastiveExplanation<F: Scalar = f64> {
    pub predicted: usize,
    pub desired: usize,
    /// Features with phi > 0 for the predicted class, largest first.
    pub why_p: Vec<Attribution<F>>,
    /// Features with phi < 0 for the desired class, most negative first.
    pub not_q: Vec<Attribution<F>>,
    pub nl_why_p: String,
    pub nl_not_q: String,
    pub shapley: ShapleyMatrix<F>,
}

/// Predicted class, desired class and attributions for a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Identified<F: Scalar = f64> {
    pub predicted: usize,
    pub desired: usize,
    pub shapley: ShapleyMatrix<F>,
}

pub fn identify_pq<F: Scalar>(
    vf: &ValueFunction<'_, F>,
    point: &[F],
    desired: usize,
    config: &ShapleyConfig,
) -> Result<Identified<F>> {
    let model = vf.model();
    check_point(point, model.n_features())?;
    let n_classes = model.n_classes();
    if desired >= n_classes {
        return Err(Error::InvalidClass {
            class: desired,
            n_classes,
        });
    }
    let predicted = model.predict(point)?;
    if predicted == desired {
        return Err(Error::NotContrastive(desired));
    }
    let shapley = shapley::explain(vf, point, config)?;
    Ok(Identified {
        predicted,
        desired,
        shapley,
    })
}

fn attributions<F: Scalar>(row: &[F], names: &[String], keep: impl Fn(F) -> bool) -> Vec<Attribution<F>> {
    row.iter()
        .enumerate()
        .filter(|(_, v)| keep(**v))
        .map(|(i, v)| Attribution {
            feature: names[i].clone(),
            index: i,
            phi: *v,
        })
        .collect()
}

pub fn build_contrastive<F: Scalar>(
    shapley: &ShapleyMatrix<F>,
    predicted: usize,
    desired: usize,
    feature_names: &[String],
) -> Result<ContrastiveExplanation<F>> {
    let c = shapley.n_classes();
    for class in [predicted, desired] {
        if class >= c {
            return Err(Error::InvalidClass { class, n_classes: c });
        }
    }
    if predicted == desired {
        return Err(Error::NotContrastive(desired));
    }
    if feature_names.len() != shapley.n_features() {
        return Err(Error::DimensionMismatch {
            expected: shapley.n_features(),
            actual: feature_names.len(),
        });
    }
    // stable sorts keep the lower feature index first on ties
    let mut why_p = attributions(shapley.class_row(predicted), feature_names, |v| v > F::zero());
    why_p.sort_by(|a, b| b.phi.partial_cmp(&a.phi).expect("finite"));
    let mut not_q = attributions(shapley.class_row(desired), feature_names, |v| v < F::zero());
    not_q.sort_by(|a, b| a.phi.partial_cmp(&b.phi).expect("finite"));
    Ok(ContrastiveExplanation {
        predicted,
        desired,
        nl_why_p: render_nl(&why_p, Polarity::Pro),
        nl_not_q: render_nl(&not_q, Polarity::Anti),
        why_p,
        not_q,
        shapley: shapley.clone(),
    })
}

/// Renders an ordered attribution list as one sentence.
pub fn render_nl<F: Scalar>(features: &[Attribution<F>], polarity: Polarity) -> String {
    let (label, word) = match polarity {
        Polarity::Pro => ("Pro", "pro"),
        Polarity::Anti => ("Anti", "anti"),
    };
    let Some((head, rest)) = features.split_first() else {
        return format!("No features {word} this classification were identified.");
    };
    let mut s = format!(
        "Algorithms {label} classification was primarily influenced by {}",
        head.feature
    );
    if !rest.is_empty() {
        s.push_str(", also influenced by ");
        for (i, a) in rest.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{}", a.feature);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::ShapleyMethod;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn matrix(rows: Vec<Vec<f64>>) -> ShapleyMatrix<f64> {
        let d = rows[0].len();
        ShapleyMatrix {
            base_values: vec![0.0; rows.len()],
            phi: rows,
            method: ShapleyMethod::Exact,
            point: vec![0.0; d],
        }
    }

    fn pairs(a: &[Attribution<f64>]) -> Vec<(&str, f64)> {
        a.iter().map(|x| (x.feature.as_str(), x.phi)).collect()
    }

    #[test]
    fn sign_filters_and_orderings() {
        let sv = matrix(vec![vec![0.3, -0.1, 0.2, 0.0], vec![0.05, -0.4, 0.0, -0.02]]);
        let e = build_contrastive(&sv, 0, 1, &names(4)).unwrap();
        assert_eq!(pairs(&e.why_p), vec![("f0", 0.3), ("f2", 0.2)]);
        assert_eq!(pairs(&e.not_q), vec![("f1", -0.4), ("f3", -0.02)]);
        assert_eq!(e.nl_why_p, "Algorithms Pro classification was primarily influenced by f0, also influenced by f2");
        assert_eq!(e.nl_not_q, "Algorithms Anti classification was primarily influenced by f1, also influenced by f3");
    }

    #[test]
    fn ties_keep_lowest_feature_index_first() {
        let sv = matrix(vec![vec![0.1, 0.2, 0.2], vec![-0.3, 0.0, -0.3]]);
        let e = build_contrastive(&sv, 0, 1, &names(3)).unwrap();
        assert_eq!(e.why_p[0].index, 1);
        assert_eq!(e.not_q[0].index, 0);
    }

    #[test]
    fn equal_classes_are_rejected() {
        let sv = matrix(vec![vec![0.1], vec![0.2]]);
        assert!(matches!(
            build_contrastive(&sv, 1, 1, &names(1)),
            Err(Error::NotContrastive(1))
        ));
    }

    #[test]
    fn rendering_templates() {
        let one = [Attribution {
            feature: "petal width (cm)".to_string(),
            index: 3,
            phi: 0.31,
        }];
        assert_eq!(
            render_nl(&one, Polarity::Pro),
            "Algorithms Pro classification was primarily influenced by petal width (cm)"
        );
        assert_eq!(
            render_nl::<f64>(&[], Polarity::Anti),
            "No features anti this classification were identified."
        );
        assert_eq!(
            render_nl::<f64>(&[], Polarity::Pro),
            "No features pro this classification were identified."
        );
        let two = [
            Attribution {
                feature: "a".to_string(),
                index: 0,
                phi: 0.5,
            },
            Attribution {
                feature: "b".to_string(),
                index: 1,
                phi: 0.2,
            },
        ];
        assert_eq!(
            render_nl(&two, Polarity::Pro),
            "Algorithms Pro classification was primarily influenced by a, also influenced by b"
        );
    }

    #[test]
    fn empty_sets_are_legal() {
        let sv = matrix(vec![vec![0.0, -0.1], vec![0.0, 0.1]]);
        let e = build_contrastive(&sv, 0, 1, &names(2)).unwrap();
        assert!(e.why_p.is_empty() && e.not_q.is_empty());
        assert_eq!(e.nl_why_p, "No features pro this classification were identified.");
    }
}
