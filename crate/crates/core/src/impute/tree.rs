//! Regression trees with variance-reduction splits, used by the random
//! forest imputer. Trees store `f64` internally regardless of the engine
//! scalar type.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub min_leaf: usize,
    pub mtry: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Fits a tree on the given sample indices. `rows[i]` is the feature
    /// vector of sample `i`, `targets[i]` its response.
    pub fn fit<R: Rng>(
        rows: &[Vec<f64>],
        targets: &[f64],
        indices: &[usize],
        cfg: &TreeConfig,
        rng: &mut R,
    ) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(rows, targets, indices, cfg, 0, rng);
        tree
    }

    fn grow<R: Rng>(
        &mut self,
        rows: &[Vec<f64>],
        targets: &[f64],
        indices: &[usize],
        cfg: &TreeConfig,
        depth: usize,
        rng: &mut R,
    ) -> usize {
        let mean = indices.iter().map(|&i| targets[i]).sum::<f64>() / indices.len() as f64;
        if depth >= cfg.max_depth || indices.len() < 2 * cfg.min_leaf {
            return self.push(Node::Leaf { value: mean });
        }

        let n_features = rows[0].len();
        let mut feats: Vec<usize> = (0..n_features).collect();
        feats.shuffle(rng);

        // examine features in shuffled order until mtry of them offered a
        // valid split; constant features do not count against the budget
        let mut splittable_seen = 0usize;
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        for &f in &feats {
            if splittable_seen >= cfg.mtry {
                break;
            }
            let mut order: Vec<usize> = indices.to_vec();
            order.sort_by(|&a, &b| rows[a][f].partial_cmp(&rows[b][f]).unwrap());
            // prefix sums for O(1) split scoring
            let n = order.len();
            let mut prefix_sum = vec![0.0; n + 1];
            for (p, &i) in order.iter().enumerate() {
                prefix_sum[p + 1] = prefix_sum[p] + targets[i];
            }
            let total = prefix_sum[n];
            let mut found_cut = false;
            for cut in cfg.min_leaf..=(n - cfg.min_leaf) {
                if cut == n {
                    break;
                }
                let lo = rows[order[cut - 1]][f];
                let hi = rows[order[cut]][f];
                if lo == hi {
                    continue;
                }
                found_cut = true;
                // score = between-group sum-of-squares improvement
                let ls = prefix_sum[cut];
                let rs = total - ls;
                let score = ls * ls / cut as f64 + rs * rs / (n - cut) as f64;
                if best.map_or(true, |(b, _, _)| score > b) {
                    best = Some((score, f, 0.5 * (lo + hi)));
                }
            }
            if found_cut {
                splittable_seen += 1;
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.push(Node::Leaf { value: mean });
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| rows[i][feature] <= threshold);
        if left_idx.is_empty() || right_idx.is_empty() {
            return self.push(Node::Leaf { value: mean });
        }
        let slot = self.push(Node::Leaf { value: mean }); // placeholder
        let left = self.grow(rows, targets, &left_idx, cfg, depth + 1, rng);
        let right = self.grow(rows, targets, &right_idx, cfg, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_one_split_matches_hand_trace() {
        // 6 samples, single feature: x = 1..6, y = (-2,-2,-2, 4, 4, 4).
        // Best variance-reduction split is between x=3 and x=4 (threshold
        // 3.5), leaves -2 and 4.
        let rows: Vec<Vec<f64>> = (1..=6).map(|v| vec![v as f64]).collect();
        let targets = vec![-2.0, -2.0, -2.0, 4.0, 4.0, 4.0];
        let idx: Vec<usize> = (0..6).collect();
        let cfg = TreeConfig {
            min_leaf: 1,
            mtry: 1,
            max_depth: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = RegressionTree::fit(&rows, &targets, &idx, &cfg, &mut rng);
        assert_eq!(tree.predict(&[2.0]), -2.0);
        assert_eq!(tree.predict(&[3.49]), -2.0);
        assert_eq!(tree.predict(&[3.51]), 4.0);
        assert_eq!(tree.predict(&[100.0]), 4.0);
    }

    #[test]
    fn pure_node_becomes_leaf() {
        let rows: Vec<Vec<f64>> = (0..10).map(|v| vec![v as f64]).collect();
        let targets = vec![7.0; 10];
        let idx: Vec<usize> = (0..10).collect();
        let cfg = TreeConfig {
            min_leaf: 2,
            mtry: 1,
            max_depth: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = RegressionTree::fit(&rows, &targets, &idx, &cfg, &mut rng);
        assert_eq!(tree.predict(&[3.0]), 7.0);
    }
}
