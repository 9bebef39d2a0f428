use tcmip::eval::bernoulli_mask;
use tcmip::gtctv::Gtctv;
use tcmip::solver::ObservationMask;
use tcmip::synthetic::smooth_low_rank;
use tcmip::{Penalty, RealTensor, Transform};

pub const DESK_SHAPE: [usize; 4] = [32, 32, 1, 16];
pub const DESK_SR: f64 = 0.3;
pub const DESK_MASK_SEED: u64 = 42;

/// Smooth rank-2 separable tensor observed on a 30% Bernoulli mask.
pub fn desk_instance() -> (RealTensor, ObservationMask) {
    let truth = smooth_low_rank(&DESK_SHAPE, 2).unwrap();
    let observed = bernoulli_mask(&DESK_SHAPE, DESK_SR, DESK_MASK_SEED).unwrap();
    let mask = ObservationMask::new(observed, &truth).unwrap();
    (truth, mask)
}

/// Abs penalty, DCT, differences along the two spatial modes and mode 4.
pub fn desk_prior() -> Gtctv {
    Gtctv::new(&[1, 2, 4], Penalty::Abs, Transform::Dct).unwrap()
}

pub fn relative_error(x: &RealTensor, truth: &RealTensor) -> f64 {
    x.dist(truth) / truth.frob()
}
