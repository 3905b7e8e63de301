//! Keypoint layout and skeleton graphs for the three keypoint groups.

use crate::tensor::Tensor;
use crate::scalar::Scalar;

pub const HAND_POINTS: usize = 21;
pub const BODY_POINTS: usize = 7;
pub const NUM_KEYPOINTS: usize = 2 * HAND_POINTS + BODY_POINTS;
/// Channels per keypoint: x, y, confidence.
pub const KEYPOINT_CHANNELS: usize = 3;

pub const LEFT_HAND: std::ops::Range<usize> = 0..HAND_POINTS;
pub const RIGHT_HAND: std::ops::Range<usize> = HAND_POINTS..2 * HAND_POINTS;
pub const BODY: std::ops::Range<usize> = 2 * HAND_POINTS..NUM_KEYPOINTS;

/// Body keypoint order within the body group.
pub mod body {
    pub const NOSE: usize = 0;
    pub const LEFT_SHOULDER: usize = 1;
    pub const RIGHT_SHOULDER: usize = 2;
    pub const LEFT_ELBOW: usize = 3;
    pub const RIGHT_ELBOW: usize = 4;
    pub const LEFT_WRIST: usize = 5;
    pub const RIGHT_WRIST: usize = 6;
}

/// Hand wrist index within a hand group; fingers follow as four-joint chains.
pub const HAND_WRIST: usize = 0;

const HAND_EDGES: [(usize, usize); 20] = [
    (0, 1), (1, 2), (2, 3), (3, 4),
    (0, 5), (5, 6), (6, 7), (7, 8),
    (0, 9), (9, 10), (10, 11), (11, 12),
    (0, 13), (13, 14), (14, 15), (15, 16),
    (0, 17), (17, 18), (18, 19), (19, 20),
];

const BODY_EDGES: [(usize, usize); 6] = [
    (body::NOSE, body::LEFT_SHOULDER),
    (body::NOSE, body::RIGHT_SHOULDER),
    (body::LEFT_SHOULDER, body::LEFT_ELBOW),
    (body::LEFT_ELBOW, body::LEFT_WRIST),
    (body::RIGHT_SHOULDER, body::RIGHT_ELBOW),
    (body::RIGHT_ELBOW, body::RIGHT_WRIST),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    LeftHand,
    RightHand,
    Body,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::LeftHand, Group::RightHand, Group::Body];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Group::LeftHand => LEFT_HAND,
            Group::RightHand => RIGHT_HAND,
            Group::Body => BODY,
        }
    }

    /// Keypoint (within the group) that coordinates are expressed relative
    /// to when anchor normalisation is on.
    pub fn anchor(self) -> usize {
        match self {
            Group::LeftHand | Group::RightHand => HAND_WRIST,
            Group::Body => body::NOSE,
        }
    }

    pub fn graph(self) -> GroupGraph {
        match self {
            Group::LeftHand | Group::RightHand => GroupGraph::new(HAND_POINTS, &HAND_EDGES),
            Group::Body => GroupGraph::new(BODY_POINTS, &BODY_EDGES),
        }
    }
}

/// Undirected skeleton graph of one keypoint group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupGraph {
    pub points: usize,
    pub edges: Vec<(usize, usize)>,
}

impl GroupGraph {
    pub fn new(points: usize, edges: &[(usize, usize)]) -> Self {
        Self {
            points,
            edges: edges.to_vec(),
        }
    }

    /// Symmetric 0/1 adjacency with zero diagonal.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.points]; self.points];
        for &(i, j) in &self.edges {
            a[i][j] = 1;
            a[j][i] = 1;
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        let a = self.adjacency();
        let mut seen = vec![false; self.points];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..self.points {
                if a[i][j] == 1 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D_ii = sum_j (A + I)_ij`.
    pub fn normalized_adjacency<T: Scalar>(&self) -> Tensor<T> {
        let a = self.adjacency();
        let k = self.points;
        let deg: Vec<f64> = (0..k)
            .map(|i| 1.0 + a[i].iter().map(|&v| v as f64).sum::<f64>())
            .collect();
        let mut data = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let aij = if i == j { 1.0 } else { a[i][j] as f64 };
                data.push(T::lit(aij / (deg[i] * deg[j]).sqrt()));
            }
        }
        Tensor::new([k, k], data).expect("square")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_partition_the_keypoints() {
        assert_eq!(NUM_KEYPOINTS, 49);
        let total: usize = Group::ALL.iter().map(|g| g.range().len()).sum();
        assert_eq!(total, 49);
    }

    #[test]
    fn adjacency_invariants() {
        for g in Group::ALL {
            let graph = g.graph();
            let a = graph.adjacency();
            for i in 0..graph.points {
                assert_eq!(a[i][i], 0);
                for j in 0..graph.points {
                    assert_eq!(a[i][j], a[j][i]);
                    assert!(a[i][j] <= 1);
                }
            }
            assert!(graph.is_connected(), "{g:?}");
        }
        assert_eq!(Group::LeftHand.graph(), Group::RightHand.graph());
        assert_eq!(Group::LeftHand.graph().points, 21);
        assert_eq!(Group::Body.graph().points, 7);
    }
}
