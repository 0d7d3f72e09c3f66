//! Built-in scenarios: random generators for the estimator studies and
//! exact few-station constructions for the 2x2 fallacy geometry.

use serde_json::json;

use crate::error::{Error, Result};
use crate::genesis::{
    generate, CovariateEffect, GeneratedData, GeneratorSpec, MarginLaw, MixtureSpec, SizeLaw,
    WeightLaw,
};
use crate::logit::{CovariateDesign, CovariateSource, DesignEntry};
use crate::tables::{ProportionTable, UnitCounts};

/// Names accepted by `--scenario`.
pub const NAMES: &[&str] = &[
    "constant",
    "diagonal-covariate",
    "mixture",
    "fig1a",
    "fig1b",
    "fig2a",
    "fig2b",
];

/// A scenario is either a randomized generator spec or a fixed set of
/// hand-constructed stations.
#[derive(Debug, Clone)]
pub enum Scenario {
    Generated(GeneratorSpec),
    Fixed {
        name: String,
        units: Vec<UnitCounts>,
    },
}

impl Scenario {
    pub fn realize(&self) -> Result<GeneratedData> {
        match self {
            Scenario::Generated(spec) => generate(spec),
            Scenario::Fixed { units, .. } => Ok(GeneratedData {
                units: units.clone(),
                latent: None,
            }),
        }
    }

    /// JSON value identifying the scenario for manifests and hashing.
    pub fn descriptor(&self) -> serde_json::Value {
        match self {
            Scenario::Generated(spec) => serde_json::to_value(spec).expect("spec serializes"),
            Scenario::Fixed { name, .. } => json!({ "preset": name }),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Scenario::Generated(spec) => Some(spec.seed),
            Scenario::Fixed { .. } => None,
        }
    }
}

/// Builds a named preset. `n_units` and `seed` apply to the randomized
/// scenarios and are ignored by the fixed constructions.
pub fn by_name(name: &str, n_units: usize, seed: u64) -> Result<Scenario> {
    match name {
        "constant" => Ok(Scenario::Generated(constant(n_units, seed))),
        "diagonal-covariate" => Ok(Scenario::Generated(diagonal_covariate(n_units, seed))),
        "mixture" => Ok(Scenario::Generated(mixture(n_units, seed))),
        "fig1a" => Ok(fixed("fig1a", fig1_left())),
        "fig1b" => Ok(fixed("fig1b", fig1_right())),
        "fig2a" => Ok(fixed("fig2a", fig2_left())),
        "fig2b" => Ok(fixed("fig2b", fig2_right())),
        other => Err(Error::Validation(format!(
            "unknown scenario '{other}'; choose one of {}",
            NAMES.join(", ")
        ))),
    }
}

/// The ecological design that matches each preset's generating mechanism.
pub fn matching_design(name: &str) -> Result<CovariateDesign> {
    match name {
        "constant" | "fig1a" | "fig1b" | "fig2a" | "fig2b" => Ok(CovariateDesign::empty()),
        "diagonal-covariate" => Ok(CovariateDesign::new(
            (0..3)
                .map(|i| DesignEntry::new(i, i, CovariateSource::RowMargin(i)))
                .collect(),
        )),
        // Vote propensity of each row depends on the row-2 share.
        "mixture" => Ok(CovariateDesign::new(
            (0..2)
                .map(|i| DesignEntry::new(i, 1, CovariateSource::RowMargin(1)))
                .collect(),
        )),
        other => Err(Error::Validation(format!("unknown scenario '{other}'"))),
    }
}

/// Constant transition probabilities: no covariate structure, so every
/// estimator is consistent.
pub fn constant(n_units: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        n_units,
        seed,
        size_law: SizeLaw::Uniform {
            min: 500,
            max: 1500,
        },
        margin_law: MarginLaw::Dirichlet {
            alpha: vec![2.0, 2.0],
        },
        base_table: ProportionTable::new(vec![vec![0.8, 0.2], vec![0.4, 0.6]])
            .expect("row-stochastic"),
        covariate_effects: vec![],
        dispersion: Some(200.0),
        mixture: None,
        cluster_law: None,
    }
}

/// Three parties with loyal diagonals that strengthen where the party was
/// already strong: each diagonal cell's log-odds rise with the own row
/// margin.
pub fn diagonal_covariate(n_units: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        n_units,
        seed,
        size_law: SizeLaw::Uniform {
            min: 500,
            max: 1500,
        },
        margin_law: MarginLaw::Dirichlet {
            alpha: vec![2.0, 2.0, 2.0],
        },
        base_table: ProportionTable::new(vec![
            vec![0.70, 0.19, 0.11],
            vec![0.10, 0.62, 0.28],
            vec![0.09, 0.10, 0.81],
        ])
        .expect("row-stochastic"),
        covariate_effects: (0..3)
            .map(|i| CovariateEffect {
                cell: [i, i],
                source: CovariateSource::RowMargin(i),
                slope: 4.0,
            })
            .collect(),
        dispersion: Some(100.0),
        mixture: None,
        cluster_law: None,
    }
}

/// Latent two-type electorate: type `V = 1` votes at around 0.40, type
/// `V = 0` almost never, and the type share rises with the row-2 margin.
/// Within-row vote propensities then correlate with the margins, which no
/// logit-scale covariate correction can undo.
pub fn mixture(n_units: usize, seed: u64) -> GeneratorSpec {
    let v0 =
        ProportionTable::new(vec![vec![0.995, 0.005], vec![0.999, 0.001]]).expect("row-stochastic");
    let v1 =
        ProportionTable::new(vec![vec![0.598, 0.402], vec![0.600, 0.400]]).expect("row-stochastic");
    let margin_law = MarginLaw::Dirichlet {
        alpha: vec![5.5, 5.5],
    };
    let weight_law = WeightLaw::Logistic {
        on_row: 1,
        intercept: -4.7,
        slope: 6.5,
    };
    // Table in force at the mean margin composition.
    let mean_weight = weight_law.weight(&margin_law.mean());
    let base = ProportionTable::new(
        (0..2)
            .map(|i| {
                (0..2)
                    .map(|j| (1.0 - mean_weight) * v0.get(i, j) + mean_weight * v1.get(i, j))
                    .collect()
            })
            .collect(),
    )
    .expect("row-stochastic");
    GeneratorSpec {
        n_units,
        seed,
        size_law: SizeLaw::Uniform {
            min: 500,
            max: 1500,
        },
        margin_law,
        base_table: base,
        covariate_effects: vec![],
        dispersion: Some(200.0),
        mixture: Some(MixtureSpec {
            tables: [v0, v1],
            weight_law,
            per_row: true,
        }),
        cluster_law: None,
    }
}

fn fixed(name: &str, units: Vec<UnitCounts>) -> Scenario {
    Scenario::Fixed {
        name: name.to_string(),
        units,
    }
}

/// Builds one exact 2x2 station from its size, row-2 share and the two
/// within-unit proportions `f_12`, `f_22`. All products must be integers.
fn exact_unit(id: &str, n: u64, x2: f64, f12: f64, f22: f64) -> UnitCounts {
    let to_int = |v: f64| -> u64 {
        let r = v.round();
        assert!(
            (v - r).abs() < 1e-9,
            "construction is not integer-exact: {v}"
        );
        r as u64
    };
    let n2 = to_int(x2 * n as f64);
    let n1 = n - n2;
    let c01 = to_int(f12 * n1 as f64);
    let c11 = to_int(f22 * n2 as f64);
    UnitCounts::new(id, vec![vec![n1 - c01, c01], vec![n2 - c11, c11]]).expect("valid construction")
}

/// Two stations with similar positive within-unit slopes and different
/// intercepts; the ecological regression through their margin points slopes
/// downward.
pub fn fig1_left() -> Vec<UnitCounts> {
    vec![
        exact_unit("u000000", 1000, 0.2, 0.7, 0.9),
        exact_unit("u000001", 1000, 0.8, 0.2, 0.4),
    ]
}

/// Two stations with the same intercept and different slopes; the
/// ecological regression is steeper than either within-unit line.
pub fn fig1_right() -> Vec<UnitCounts> {
    vec![
        exact_unit("u000000", 1000, 0.2, 0.2, 0.4),
        exact_unit("u000001", 1000, 0.8, 0.2, 0.8),
    ]
}

/// Five stations sharing one within-unit slope while the intercept falls
/// linearly in the row-2 share: the margin points line up exactly on a
/// decreasing line.
pub fn fig2_left() -> Vec<UnitCounts> {
    let xs = [0.1, 0.3, 0.5, 0.7, 0.9];
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f12 = 0.7 - 0.6 * x;
            exact_unit(&format!("u{k:06}"), 1000, x, f12, f12 + 0.2)
        })
        .collect()
}

/// Five stations sharing one within-unit slope while the intercept varies
/// as a quadratic in the row-2 share; the shares are symmetric around 1/2,
/// so the opposing biases cancel and the ecological slope equals the
/// common within-unit slope.
pub fn fig2_right() -> Vec<UnitCounts> {
    let xs = [0.1, 0.3, 0.5, 0.7, 0.9];
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f12 = 0.2 + (x - 0.5) * (x - 0.5);
            exact_unit(&format!("u{k:06}"), 1000, x, f12, f12 + 0.3)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::margins_of;

    #[test]
    fn all_names_build() {
        for name in NAMES {
            let sc = by_name(name, 10, 1).unwrap();
            let data = sc.realize().unwrap();
            assert!(!data.units.is_empty());
            matching_design(name).unwrap();
        }
        assert!(by_name("nope", 10, 1).is_err());
    }

    #[test]
    fn fixed_constructions_have_the_stated_margins() {
        for (units, xs) in [
            (fig1_left(), vec![0.2, 0.8]),
            (fig1_right(), vec![0.2, 0.8]),
            (fig2_left(), vec![0.1, 0.3, 0.5, 0.7, 0.9]),
            (fig2_right(), vec![0.1, 0.3, 0.5, 0.7, 0.9]),
        ] {
            assert_eq!(units.len(), xs.len());
            for (u, &x) in units.iter().zip(&xs) {
                let m = margins_of(u);
                assert_eq!(u.total(), 1000);
                assert!((m.row_share(1) - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fig_constructions_match_their_line_geometry() {
        // fig1a: both unit slopes positive.
        for u in fig1_left() {
            let f1 = u.row_proportions(0).unwrap()[1];
            let f2 = u.row_proportions(1).unwrap()[1];
            assert!(f2 > f1);
        }
        // fig1b: equal intercepts.
        let units = fig1_right();
        assert_eq!(
            units[0].row_proportions(0).unwrap()[1],
            units[1].row_proportions(0).unwrap()[1]
        );
        // fig2a: common slope 0.2, intercept decreasing in x2.
        let units = fig2_left();
        let mut last_intercept = f64::INFINITY;
        for u in &units {
            let f1 = u.row_proportions(0).unwrap()[1];
            let f2 = u.row_proportions(1).unwrap()[1];
            assert!((f2 - f1 - 0.2).abs() < 1e-12);
            assert!(f1 < last_intercept);
            last_intercept = f1;
        }
    }

    #[test]
    fn descriptor_identifies_fixed_and_generated() {
        let sc = by_name("fig1a", 0, 0).unwrap();
        assert_eq!(sc.descriptor()["preset"], "fig1a");
        assert_eq!(sc.seed(), None);
        let sc = by_name("constant", 100, 7).unwrap();
        assert_eq!(sc.descriptor()["seed"], 7);
        assert_eq!(sc.seed(), Some(7));
    }
}
