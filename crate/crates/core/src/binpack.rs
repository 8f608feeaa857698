//! First-fit bucketing of bid probabilities.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Bin<T> {
    pub items: Vec<(usize, T)>,
    pub load: T,
}

/// Places each item into the first bin with room, opening bins as needed.
pub fn first_fit<T: Scalar>(items: &[(usize, T)]) -> Result<Vec<Bin<T>>> {
    let hard = T::one() + T::from_f64_lossy(1e-9);
    let slack = T::one() + T::cmp_tol();
    let mut bins: Vec<Bin<T>> = Vec::new();
    for (id, size) in items {
        if *size > hard || *size < T::zero() {
            return Err(Error::Domain(format!("item {id} has size {size:?} outside [0,1]")));
        }
        let size = T::min_of(size.clone(), T::one());
        match bins.iter_mut().find(|b| b.load.clone() + size.clone() <= slack) {
            Some(b) => {
                b.load = b.load.clone() + size.clone();
                b.items.push((*id, size));
            }
            None => bins.push(Bin { items: vec![(*id, size.clone())], load: size }),
        }
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let bins = first_fit(&[(0, 0.6f64), (1, 0.5), (2, 0.4), (3, 0.3)]).unwrap();
        let ids: Vec<Vec<usize>> = bins.iter().map(|b| b.items.iter().map(|i| i.0).collect()).collect();
        assert_eq!(ids, vec![vec![0, 2], vec![1, 3]]);
        assert!((bins[0].load - 1.0).abs() < 1e-15);
        assert!((bins[1].load - 0.8).abs() < 1e-15);
    }

    #[test]
    fn singletons() {
        assert_eq!(first_fit(&[(4, 0.2)]).unwrap().len(), 1);
        let bins = first_fit(&[(0, 1.0), (1, 1.0), (2, 1.0)]).unwrap();
        assert_eq!(bins.len(), 3);
    }

    #[test]
    fn oversize_rejected() {
        assert!(first_fit(&[(0, 1.1)]).is_err());
        assert_eq!(first_fit(&[(0, 1.0 + 1e-12)]).unwrap()[0].load, 1.0);
    }

    proptest! {
        #[test]
        fn at_most_one_light_bin(sizes in prop::collection::vec(0.0f64..=1.0, 0..40)) {
            let items: Vec<(usize, f64)> = sizes.iter().copied().enumerate().collect();
            let bins = first_fit(&items).unwrap();
            prop_assert!(bins.iter().filter(|b| b.load < 0.5).count() <= 1);
            prop_assert!(bins.iter().all(|b| b.load <= 1.0 + 1e-12));
            prop_assert_eq!(bins.iter().map(|b| b.items.len()).sum::<usize>(), sizes.len());
        }
    }
}
