//! Mapping between kernel coordinates `(j, i, z)` and positions in the
//! flattened per-output weight vector.

use crate::error::{Error, Result};

/// Order in which a `K x K x Z` kernel column is flattened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FlattenOrder {
    /// `(i * Z + z) * K + j`: all `j` taps of one slice-buffer row are
    /// adjacent, rows follow z, then kernel row i.
    #[default]
    Izj,
    /// `(z * K + i) * K + j`: channel-major, matching the weight file nesting.
    Zij,
}

impl FlattenOrder {
    pub fn id(self) -> u8 {
        match self {
            FlattenOrder::Izj => 0,
            FlattenOrder::Zij => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(FlattenOrder::Izj),
            1 => Ok(FlattenOrder::Zij),
            _ => Err(Error::format(format!("unknown flatten order id {id}"))),
        }
    }

    #[inline]
    pub fn flatten(self, j: usize, i: usize, z: usize, k: usize, z_dim: usize) -> usize {
        match self {
            FlattenOrder::Izj => (i * z_dim + z) * k + j,
            FlattenOrder::Zij => (z * k + i) * k + j,
        }
    }

    /// Inverse of [`flatten`](Self::flatten), returning `(j, i, z)`.
    #[inline]
    pub fn unflatten(self, pos: usize, k: usize, z_dim: usize) -> (usize, usize, usize) {
        let j = pos % k;
        let rest = pos / k;
        match self {
            FlattenOrder::Izj => (j, rest / z_dim, rest % z_dim),
            FlattenOrder::Zij => (j, rest % k, rest / k),
        }
    }
}

/// Default-order flattening, `(i * Z + z) * K + j`.
pub fn flatten_index(j: usize, i: usize, z: usize, k: usize, z_dim: usize) -> usize {
    FlattenOrder::Izj.flatten(j, i, z, k, z_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(flatten_index(0, 0, 0, 3, 2), 0);
        assert_eq!(flatten_index(1, 2, 1, 3, 2), 16);
    }

    #[test]
    fn bijective_for_both_orders() {
        for order in [FlattenOrder::Izj, FlattenOrder::Zij] {
            for (k, zd) in [(3, 2), (1, 5), (3, 7)] {
                let mut seen = vec![false; k * k * zd];
                for i in 0..k {
                    for z in 0..zd {
                        for j in 0..k {
                            let p = order.flatten(j, i, z, k, zd);
                            assert!(!seen[p]);
                            seen[p] = true;
                            assert_eq!(order.unflatten(p, k, zd), (j, i, z));
                        }
                    }
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
    }

    #[test]
    fn ids_round_trip() {
        for order in [FlattenOrder::Izj, FlattenOrder::Zij] {
            assert_eq!(FlattenOrder::from_id(order.id()).unwrap(), order);
        }
        assert!(FlattenOrder::from_id(9).is_err());
    }
}
