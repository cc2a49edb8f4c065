use crate::real::Real;
use crate::voxel_map::{FeatureSource, VoxelKey, FEATURE_DIM};

pub const STENCIL_CELLS: usize = 27;

/// 27 neighborhood feature vectors followed by 27 presence bits.
pub const STENCIL_DIM: usize = STENCIL_CELLS * FEATURE_DIM + STENCIL_CELLS;

/// Neighbor offsets in the order they appear in a stencil.
pub fn stencil_offsets() -> impl Iterator<Item = (i32, i32, i32)> {
    (-1..=1).flat_map(|di| (-1..=1).flat_map(move |dj| (-1..=1).map(move |dk| (di, dj, dk))))
}

/// Writes the stencil of `key` into `out` (length [`STENCIL_DIM`]).
/// Returns `false`, leaving `out` unspecified, when the center voxel has no
/// features.
pub fn fill_stencil<T: Real, F: FeatureSource<T> + ?Sized>(src: &F, key: &VoxelKey, out: &mut [T]) -> bool {
    debug_assert_eq!(out.len(), STENCIL_DIM);
    let presence_base = STENCIL_CELLS * FEATURE_DIM;
    for (n, (di, dj, dk)) in stencil_offsets().enumerate() {
        let slot = &mut out[n * FEATURE_DIM..(n + 1) * FEATURE_DIM];
        match src.features_at(&key.offset(di, dj, dk)) {
            Some(f) => {
                slot.copy_from_slice(&f.0);
                out[presence_base + n] = T::one();
            }
            None => {
                if (di, dj, dk) == (0, 0, 0) {
                    return false;
                }
                slot.fill(T::zero());
                out[presence_base + n] = T::zero();
            }
        }
    }
    true
}

pub fn stencil_input<T: Real, F: FeatureSource<T> + ?Sized>(src: &F, key: &VoxelKey) -> Option<Vec<T>> {
    let mut out = vec![T::zero(); STENCIL_DIM];
    fill_stencil(src, key, &mut out).then_some(out)
}
