//! Fully discrete glimpse worlds small enough to enumerate.
//!
//! A world has `cells × scales` single-step choices and `glimpses` steps, so
//! `(cells·scales)^glimpses` action sequences. Tables are indexed by prefix
//! nodes of the choice tree: the node of a prefix `c₁…c_d` (`d < glimpses`)
//! is `Σ_{j<d} B^j + code(c₁…c_d)` with `B = cells·scales` and `code` the
//! mixed-radix value, first choice most significant.

use rand::Rng;
use rand_distr::StandardNormal;

use super::sensor::{Action, ActionSpace, Environment};
use crate::diffnet::softmax;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Explicit probability tables of a toy world.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTables {
    /// One distribution over the `B` choices per prefix node.
    pub prior: Vec<Vec<f64>>,
    /// One distribution over classes per full action sequence.
    pub likelihood: Vec<Vec<f64>>,
    /// Proposal rows per `(label, prefix node)`, label-major. `None` means uniform.
    pub proposal: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    cells: usize,
    scales: usize,
    glimpses: usize,
    classes: usize,
    tables: ToyTables,
    features: Vec<Vec<f64>>,
    context: Vec<f64>,
}

pub fn prefix_node_count(branching: usize, glimpses: usize) -> usize {
    (0..glimpses).map(|d| branching.pow(d as u32)).sum()
}

pub fn prefix_node(branching: usize, prefix: &[usize]) -> usize {
    let offset = prefix_node_count(branching, prefix.len());
    offset + prefix.iter().fold(0, |acc, c| acc * branching + c)
}

pub fn sequence_code(branching: usize, choices: &[usize]) -> usize {
    choices.iter().fold(0, |acc, c| acc * branching + c)
}

/// Inverse of [`sequence_code`] for sequences of length `len`.
pub fn sequence_choices(branching: usize, len: usize, mut code: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = code % branching;
        code /= branching;
    }
    out
}

fn check_rows(name: &str, rows: &[Vec<f64>], count: usize, width: usize) -> Result<()> {
    if rows.len() != count {
        return Err(Error::config(format!(
            "{name} table has {} rows, expected {count}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::config(format!(
                "{name} row {i} has {} entries, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config(format!(
                "{name} row {i} has a negative or non-finite entry"
            )));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("{name} row {i} sums to {total}, not 1")));
        }
    }
    Ok(())
}

/// Validates tables and builds a world with one-hot glimpse features and a
/// constant unit context.
pub fn make_toy_world(cells: usize, scales: usize, glimpses: usize, tables: ToyTables) -> Result<ToyWorld> {
    let classes = tables.likelihood.first().map(Vec::len).unwrap_or(0);
    ToyWorld::new(cells, scales, glimpses, classes, tables)
}

impl ToyWorld {
    pub fn new(cells: usize, scales: usize, glimpses: usize, classes: usize, tables: ToyTables) -> Result<Self> {
        if cells == 0 || scales == 0 || glimpses == 0 || classes == 0 {
            return Err(Error::config("toy world dimensions must be positive"));
        }
        let b = cells * scales;
        let nodes = prefix_node_count(b, glimpses);
        check_rows("prior", &tables.prior, nodes, b)?;
        check_rows("likelihood", &tables.likelihood, b.pow(glimpses as u32), classes)?;
        if let Some(q) = &tables.proposal {
            check_rows("proposal", q, classes * nodes, b)?;
        }
        let features = (0..b)
            .map(|i| (0..b).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Ok(Self {
            cells,
            scales,
            glimpses,
            classes,
            tables,
            features,
            context: vec![1.0],
        })
    }

    pub fn uniform(cells: usize, scales: usize, glimpses: usize, classes: usize) -> Result<Self> {
        let b = cells * scales;
        let tables = ToyTables {
            prior: vec![vec![1.0 / b as f64; b]; prefix_node_count(b, glimpses)],
            likelihood: vec![vec![1.0 / classes as f64; classes]; b.pow(glimpses as u32)],
            proposal: None,
        };
        Self::new(cells, scales, glimpses, classes, tables)
    }

    /// Random tables: every row is the softmax of standard normal logits
    /// times `spread`. The proposal is random too.
    pub fn random(
        cells: usize,
        scales: usize,
        glimpses: usize,
        classes: usize,
        spread: f64,
        seed: u64,
    ) -> Result<Self> {
        let b = cells * scales;
        let nodes = prefix_node_count(b, glimpses);
        let mut rng = substream(seed, "toy-world", 0);
        let mut row = |n: usize| -> Vec<f64> {
            softmax(
                &(0..n)
                    .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<_>>(),
            )
        };
        let prior = (0..nodes).map(|_| row(b)).collect();
        let likelihood = (0..b.pow(glimpses as u32)).map(|_| row(classes)).collect();
        let proposal = Some((0..classes * nodes).map(|_| row(b)).collect());
        let mut world = Self::new(
            cells,
            scales,
            glimpses,
            classes,
            ToyTables {
                prior,
                likelihood,
                proposal,
            },
        )?;
        let mut frng = substream(seed, "toy-world", 1);
        world.features = (0..b)
            .map(|_| (0..3).map(|_| frng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        world.context = (0..2).map(|_| frng.sample::<f64, _>(StandardNormal)).collect();
        Ok(world)
    }

    /// Two cells, one scale, one glimpse, two classes: prior (0.6, 0.4),
    /// `p(y=0|a) = (0.9, 0.1)`, uniform proposal. Label 0 gives
    /// `ℓ = log 0.58` and posterior `(27/29, 2/29)`.
    pub fn fixture() -> Self {
        let tables = ToyTables {
            prior: vec![vec![0.6, 0.4]],
            likelihood: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            proposal: Some(vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
        };
        Self::new(2, 1, 1, 2, tables).expect("fixture tables are valid")
    }

    pub fn with_features(mut self, features: Vec<Vec<f64>>, context: Vec<f64>) -> Result<Self> {
        let dim = features.first().map(Vec::len).unwrap_or(0);
        if features.len() != self.branching() || dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(Error::config("one equal-length feature row per choice required"));
        }
        if context.is_empty() {
            return Err(Error::config("context must be non-empty"));
        }
        self.features = features;
        self.context = context;
        Ok(self)
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn glimpses(&self) -> usize {
        self.glimpses
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Single-step choices `cells · scales`.
    pub fn branching(&self) -> usize {
        self.cells * self.scales
    }

    pub fn sequence_count(&self) -> u128 {
        (self.branching() as u128).pow(self.glimpses as u32)
    }

    pub fn tables(&self) -> &ToyTables {
        &self.tables
    }

    pub fn prefix_nodes(&self) -> usize {
        prefix_node_count(self.branching(), self.glimpses)
    }

    /// Proposal row for `label` at prefix node `node` (uniform when absent).
    pub fn proposal_row(&self, label: usize, node: usize) -> Vec<f64> {
        match &self.tables.proposal {
            Some(q) => q[label * self.prefix_nodes() + node].clone(),
            None => vec![1.0 / self.branching() as f64; self.branching()],
        }
    }

    /// `p(a)` of a full choice sequence under the prior table.
    pub fn table_prior(&self, choices: &[usize]) -> f64 {
        (0..choices.len())
            .map(|d| self.tables.prior[prefix_node(self.branching(), &choices[..d])][choices[d]])
            .product()
    }

    pub fn table_likelihood(&self, choices: &[usize], label: usize) -> f64 {
        self.tables.likelihood[sequence_code(self.branching(), choices)][label]
    }
}

impl Environment for ToyWorld {
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            cells: self.cells,
            scales: self.scales,
        }
    }

    fn context(&self) -> &[f64] {
        &self.context
    }

    fn glimpse(&self, action: &Action) -> Vec<f64> {
        match self.action_space().index_of(action) {
            Some(i) => self.features[i].clone(),
            None => vec![0.0; self.glimpse_dim()],
        }
    }

    fn glimpse_dim(&self) -> usize {
        self.features[0].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_numbers() {
        let w = ToyWorld::fixture();
        let marginal: f64 = (0..2).map(|a| w.table_prior(&[a]) * w.table_likelihood(&[a], 0)).sum();
        assert!((marginal - 0.58).abs() < 1e-15);
        assert_eq!(w.sequence_count(), 2);
    }

    #[test]
    fn counting() {
        let w = ToyWorld::uniform(4, 2, 2, 3).unwrap();
        assert_eq!(w.sequence_count(), 64);
        assert_eq!(w.prefix_nodes(), 9);
        assert_eq!(prefix_node(8, &[]), 0);
        assert_eq!(prefix_node(8, &[3]), 4);
        let seq = sequence_choices(8, 2, 27);
        assert_eq!(seq, vec![3, 3]);
        assert_eq!(sequence_code(8, &seq), 27);
    }

    #[test]
    fn invalid_tables_rejected() {
        let bad = ToyTables {
            prior: vec![vec![0.7, 0.4]],
            likelihood: vec![vec![1.0], vec![1.0]],
            proposal: None,
        };
        assert!(matches!(make_toy_world(2, 1, 1, bad), Err(Error::Config(_))));
        let short = ToyTables {
            prior: vec![vec![0.5, 0.5]],
            likelihood: vec![vec![1.0]],
            proposal: None,
        };
        assert!(make_toy_world(2, 1, 1, short).is_err());
    }

    #[test]
    fn random_worlds_are_reproducible() {
        assert_eq!(
            ToyWorld::random(2, 2, 2, 3, 1.0, 4).unwrap(),
            ToyWorld::random(2, 2, 2, 3, 1.0, 4).unwrap()
        );
    }
}
