use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds;

const MAX_DIRICHLET_ATTEMPTS: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub mode: PartitionMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.5
}

impl PartitionSpec {
    pub fn iid(n_clients: usize) -> Self {
        Self {
            n_clients,
            mode: PartitionMode::Iid,
            alpha: default_alpha(),
        }
    }

    pub fn dirichlet(n_clients: usize, alpha: f64) -> Self {
        Self {
            n_clients,
            mode: PartitionMode::Dirichlet,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Partition("n_clients must be positive".into()));
        }
        if self.mode == PartitionMode::Dirichlet && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Partition(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Row indices assigned to each client. Shards are disjoint, cover every row
/// and are non-empty.
pub fn partition_indices(data: &LabeledDataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if spec.n_clients > data.len() {
        return Err(Error::Partition(format!(
            "{} clients but only {} samples",
            spec.n_clients,
            data.len()
        )));
    }
    let mut rng = seeds::stream(seed, "partition", 0, 0);
    match spec.mode {
        PartitionMode::Iid => Ok(iid(data.len(), spec.n_clients, &mut rng)),
        PartitionMode::Dirichlet => dirichlet(data, spec.n_clients, spec.alpha, &mut rng),
    }
}

pub fn partition(data: &LabeledDataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<LabeledDataset>> {
    Ok(partition_indices(data, spec, seed)?.iter().map(|idx| data.subset(idx)).collect())
}

fn iid(n: usize, n_clients: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        shards.push(order[start..start + size].to_vec());
        start += size;
    }
    shards
}

/// Label-skew partition: for every class, client shares are drawn from
/// Dirichlet(alpha) and the class's rows are cut at the cumulative shares.
/// Redrawn until every client holds at least one row.
fn dirichlet(data: &LabeledDataset, n_clients: usize, alpha: f64, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Partition(e.to_string()))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }

    for _ in 0..MAX_DIRICHLET_ATTEMPTS {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for rows in &by_class {
            if rows.is_empty() {
                continue;
            }
            let mut rows = rows.clone();
            rows.shuffle(rng);
            let props = draw_dirichlet(&gamma, n_clients, rng);
            let mut cum = 0.0;
            let mut start = 0;
            for (c, p) in props.iter().enumerate() {
                cum += p;
                let end = if c + 1 == n_clients {
                    rows.len()
                } else {
                    ((cum * rows.len() as f64) as usize).clamp(start, rows.len())
                };
                shards[c].extend_from_slice(&rows[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            for s in &mut shards {
                s.sort_unstable();
            }
            return Ok(shards);
        }
    }
    Err(Error::Partition(format!(
        "no Dirichlet({alpha}) draw gave every one of {n_clients} clients a sample"
    )))
}

fn draw_dirichlet(gamma: &Gamma<f64>, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..n).map(|_| rng.sample(gamma)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_blobs;
    use proptest::prelude::*;

    fn class_share_variance(data: &LabeledDataset, shards: &[Vec<usize>]) -> f64 {
        // variance across clients of each class share, maximised over classes
        let k = data.n_classes();
        let mut worst: f64 = 0.0;
        for class in 0..k {
            let shares: Vec<f64> = shards
                .iter()
                .map(|s| s.iter().filter(|&&i| data.label(i) == class).count() as f64 / s.len() as f64)
                .collect();
            let m = shares.iter().sum::<f64>() / shares.len() as f64;
            let v = shares.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / shares.len() as f64;
            worst = worst.max(v);
        }
        worst
    }

    #[test]
    fn iid_even_split() {
        let d = generate_blobs(4, 3, 1000, 1).unwrap();
        let shards = partition_indices(&d, &PartitionSpec::iid(10), 5).unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| (99..=101).contains(&s.len())));
        let d = generate_blobs(4, 3, 1003, 1).unwrap();
        let shards = partition_indices(&d, &PartitionSpec::iid(10), 5).unwrap();
        assert!(shards.iter().all(|s| (100..=101).contains(&s.len())));
    }

    #[test]
    fn dirichlet_is_more_skewed_than_iid() {
        let d = generate_blobs(10, 3, 2000, 1).unwrap();
        let iid = partition_indices(&d, &PartitionSpec::iid(10), 5).unwrap();
        let dir = partition_indices(&d, &PartitionSpec::dirichlet(10, 0.5), 5).unwrap();
        assert!(class_share_variance(&d, &dir) > class_share_variance(&d, &iid));
    }

    #[test]
    fn dirichlet_concentration_limit_matches_global_histogram() {
        let d = generate_blobs(4, 2, 4000, 2).unwrap();
        let global: Vec<f64> = d.class_histogram().iter().map(|&c| c as f64 / d.len() as f64).collect();
        let shards = partition(&d, &PartitionSpec::dirichlet(10, 1e6), 9).unwrap();
        for s in &shards {
            let h = s.class_histogram();
            for (c, &g) in global.iter().enumerate() {
                let share = h[c] as f64 / s.len() as f64;
                assert!((share - g).abs() <= 0.05, "class {c}: {share} vs {g}");
            }
        }
    }

    #[test]
    fn impossible_partitions_fail() {
        let d = generate_blobs(2, 2, 5, 1).unwrap();
        assert!(matches!(partition(&d, &PartitionSpec::iid(6), 1), Err(Error::Partition(_))));
        assert!(partition(&d, &PartitionSpec::dirichlet(3, -1.0), 1).is_err());
        assert!(partition(&d, &PartitionSpec::iid(0), 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn shards_are_disjoint_and_cover(n in 20usize..200, clients in 1usize..10, alpha in 0.1f64..5.0, dir in any::<bool>(), seed in any::<u64>()) {
            let d = generate_blobs(3, 2, n, seed).unwrap();
            let spec = if dir { PartitionSpec::dirichlet(clients, alpha) } else { PartitionSpec::iid(clients) };
            let shards = match partition_indices(&d, &spec, seed) {
                Ok(s) => s,
                Err(Error::Partition(_)) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            prop_assert!(shards.iter().all(|s| !s.is_empty()));
            let mut all: Vec<usize> = shards.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
