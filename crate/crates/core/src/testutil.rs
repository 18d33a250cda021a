use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::Matrix;

pub(crate) use crate::gradcheck::{central_difference, max_rel_error};

pub(crate) fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}
