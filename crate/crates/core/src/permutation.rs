//! State permutations that leave the input-output map unchanged.
//!
//! For a permutation `T` (row `i` of `T` is row `z[i]` of the identity) the
//! permuted network runs on `x̃ = T x`. Only three layers change: the state
//! columns of the first state layer, the rows and bias of the last state layer
//! and the columns of the first output layer. Every other parameter is copied.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{SsnnModel, VarianceStats};
use crate::scalar::Real;
use crate::training::loss::{loss, LossBreakdown, LossWeights};

/// Permutation `z` of `0..d`; state `i` of the permuted model is state `z[i]`
/// of the original.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PermutationIndex(Vec<usize>);

impl PermutationIndex {
    pub fn new(z: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; z.len()];
        for &i in &z {
            if i >= z.len() || seen[i] {
                return Err(Error::Permutation(format!("{z:?} is not a permutation of 0..{}", z.len())));
            }
            seen[i] = true;
        }
        Ok(Self(z))
    }

    pub fn identity(d: usize) -> Self {
        Self((0..d).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &z)| i == z)
    }

    /// Index `q` with `q[z[i]] = i`, so permuting by `z` then `q` is a no-op.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &z) in self.0.iter().enumerate() {
            inv[z] = i;
        }
        Self(inv)
    }

    /// The permutation matrix `T = I(z, :)`.
    pub fn matrix<T: Real>(&self) -> DMatrix<T> {
        let d = self.0.len();
        DMatrix::from_fn(d, d, |r, c| if self.0[r] == c { T::one() } else { T::zero() })
    }

    /// `T v`
    pub fn apply<T: Real>(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_fn(self.0.len(), |i, _| v[self.0[i]])
    }
}

/// Sorts states by non-increasing variance; ties keep their original order.
pub fn variance_sort_index<T: Real>(stats: &VarianceStats<T>) -> PermutationIndex {
    sort_index(stats.variances.as_slice())
}

pub fn sort_index<T: Real>(variances: &[T]) -> PermutationIndex {
    let mut z: Vec<usize> = (0..variances.len()).collect();
    // Vec::sort_by is stable.
    z.sort_by(|&a, &b| variances[b].partial_cmp(&variances[a]).unwrap_or(std::cmp::Ordering::Equal));
    PermutationIndex(z)
}

/// Builds the equivalent network whose states are `T x`.
pub fn permute_model<T: Real>(model: &SsnnModel<T>, z: &PermutationIndex) -> Result<SsnnModel<T>> {
    model.validate()?;
    let d = model.state_dim();
    if z.len() != d {
        return Err(Error::dim("permutation length", d, z.len()));
    }
    let z = z.as_slice();
    let mut out = model.clone();

    // Ã_f1 = A_f1 [T⁻¹ I_m]: column i of the state block is column z[i].
    let src = &model.state_layers[0].weights;
    let dst = &mut out.state_layers[0].weights;
    for (i, &zi) in z.iter().enumerate() {
        dst.set_column(i, &src.column(zi));
    }

    // σ̃_fL = T σ_fL, realized on the rows of (A_fL, b_fL).
    // With a single state layer the column permutation above must be kept.
    let last = model.state_layers.len() - 1;
    let src = out.state_layers[last].clone();
    let dst = &mut out.state_layers[last];
    for (i, &zi) in z.iter().enumerate() {
        dst.weights.set_row(i, &src.weights.row(zi));
        dst.bias[i] = src.bias[zi];
    }

    // Ã_g1 = A_g1 T⁻¹
    let src = &model.output_layers[0].weights;
    let dst = &mut out.output_layers[0].weights;
    for (i, &zi) in z.iter().enumerate() {
        dst.set_column(i, &src.column(zi));
    }

    out.x0 = DVector::from_fn(d, |i, _| model.x0[z[i]]);
    Ok(out)
}

/// Loss of the model and of its permutation by `z`.
pub fn permuted_loss_check<T: Real>(
    model: &SsnnModel<T>,
    data: &Dataset<T>,
    weights: &LossWeights<T>,
    z: &PermutationIndex,
) -> Result<(LossBreakdown<T>, LossBreakdown<T>)> {
    let original = loss(model, data, weights)?;
    let permuted = loss(&permute_model(model, z)?, data, weights)?;
    Ok((original, permuted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{variance_stats, Architecture};
    use approx::assert_relative_eq;
    use proptest::prelude::{Just, Strategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn index_validation() {
        assert!(PermutationIndex::new(vec![0, 0]).is_err());
        assert!(PermutationIndex::new(vec![0, 2]).is_err());
        let z = PermutationIndex::new(vec![2, 0, 1]).unwrap();
        assert_eq!(z.inverse().as_slice(), &[1, 2, 0]);
        let t: DMatrix<f64> = z.matrix();
        let v = DVector::from_vec(vec![10.0, 20.0, 30.0]);
        assert_eq!(t * &v, z.apply(&v));
        assert_eq!(z.apply(&v).as_slice(), &[30.0, 10.0, 20.0]);
    }

    #[test]
    fn sorting_examples() {
        let z = sort_index(&[0.0029, 0.0010, 0.0264]);
        assert_eq!(z.as_slice(), &[2, 0, 1]);
        assert!(sort_index(&[3.0, 2.0, 1.0]).is_identity());
        assert!(sort_index(&[1.0, 1.0, 1.0]).is_identity());
        assert_eq!(sort_index(&[1.0, 2.0, 2.0]).as_slice(), &[1, 2, 0]);
    }

    fn random_model(rng: &mut ChaCha8Rng) -> SsnnModel<f64> {
        let arch = Architecture::new(3, 2, 2, vec![4, 5, 3], vec![3, 2]).unwrap();
        let mut m = SsnnModel::random(&arch, 0.9, rng).unwrap();
        m.x0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        m
    }

    #[test]
    fn identity_permutation_is_exact_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng);
        assert_eq!(permute_model(&m, &PermutationIndex::identity(3)).unwrap(), m);
    }

    #[test]
    fn one_step_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng);
        let z = PermutationIndex::new(vec![1, 2, 0]).unwrap();
        let p = permute_model(&m, &z).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let lhs = p.state_step(&z.apply(&x), &u).unwrap();
        let rhs = z.apply(&m.state_step(&x, &u).unwrap());
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        assert_relative_eq!(
            p.output_map(&z.apply(&x)).unwrap(),
            m.output_map(&x).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn involution_restores_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng);
        let z = PermutationIndex::new(vec![2, 0, 1]).unwrap();
        let back = permute_model(&permute_model(&m, &z).unwrap(), &z.inverse()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rearrangement_hand_example() {
        // Variances in ratio 1:2 with weights (1, 2).
        let arch = Architecture::new(2, 1, 1, vec![2], vec![1]).unwrap();
        let mut m = SsnnModel::<f64>::zeros(&arch).unwrap();
        m.state_layers[0].weights = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 2f64.sqrt()]);
        let u = DMatrix::from_fn(1, 2, |_, k| if k == 0 { 1.0 } else { -1.0 });
        // Two samples: x_0 = 0 and x_1 = (1, √2): variances (0.5, 1).
        let data = Dataset::unsplit(u, DMatrix::zeros(1, 2)).unwrap();
        let w = LossWeights::new(1.0, 1.0, DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let traj = m.simulate(&data.inputs).unwrap();
        let stats = variance_stats(&traj.states).unwrap();
        assert_relative_eq!(stats.variances[0] * 2.0, stats.variances[1], epsilon = 1e-15);
        let z = variance_sort_index(&stats);
        assert_eq!(z.as_slice(), &[1, 0]);
        let (orig, perm) = permuted_loss_check(&m, &data, &w, &z).unwrap();
        // Ĵ_v ∝ 1·1 + 2·2 = 5, J̃_v ∝ 1·2 + 2·1 = 4 in units of V_x1.
        assert_relative_eq!(orig.variance / perm.variance, 5.0 / 4.0, epsilon = 1e-12);
        assert_eq!(orig.spe, perm.spe);
        assert_eq!(orig.param, perm.param);
    }

    #[test]
    fn single_layer_state_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = Architecture::new(3, 1, 1, vec![3], vec![1]).unwrap();
        let m = SsnnModel::<f64>::random(&arch, 0.9, &mut rng).unwrap();
        let z = PermutationIndex::new(vec![2, 0, 1]).unwrap();
        let p = permute_model(&m, &z).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.1, 0.7]);
        let u = DVector::from_vec(vec![0.4]);
        assert_relative_eq!(
            p.state_step(&z.apply(&x), &u).unwrap(),
            z.apply(&m.state_step(&x, &u).unwrap()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn wrong_length_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng);
        assert!(permute_model(&m, &PermutationIndex::identity(2)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn inverse_undoes_a_permutation(z in (1usize..7).prop_flat_map(|d| Just((0..d).collect::<Vec<_>>()).prop_shuffle()), seed in 0u64..1000) {
            let z = PermutationIndex::new(z).unwrap();
            let v = DVector::from_fn(z.len(), |i, _| i as f64 + 0.5);
            proptest::prop_assert_eq!(z.inverse().apply(&z.apply(&v)), v.clone());
            let t: DMatrix<f64> = z.matrix();
            proptest::prop_assert_eq!(&t * t.transpose(), DMatrix::identity(z.len(), z.len()));

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = z.len();
            let arch = Architecture::two_layer(d, 1, 1, 3, 2).unwrap();
            let model = crate::model::SsnnModel::<f64>::random(&arch, 0.8, &mut rng).unwrap();
            let back = permute_model(&permute_model(&model, &z).unwrap(), &z.inverse()).unwrap();
            proptest::prop_assert!((back.flatten() - model.flatten()).amax() < 1e-15);
        }
    }
}
