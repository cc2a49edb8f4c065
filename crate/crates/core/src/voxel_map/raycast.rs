//! Grid traversal of a ray segment (Amanatides–Woo stepping).

use super::key::{index_of, VoxelKey};
use crate::real::{Real, Vec3};

/// Cells crossed by the segment `origin → endpoint`, in order, starting with
/// the origin cell and excluding the endpoint cell.
///
/// Each step advances exactly one axis toward the endpoint cell, so the
/// result has `|Δi| + |Δj| + |Δk|` entries and the walk always terminates
/// on the endpoint cell even when floating point puts a crossing on a
/// boundary.
pub fn raycast_voxels<T: Real>(origin: &Vec3<T>, endpoint: &Vec3<T>, resolution: T) -> Vec<VoxelKey> {
    let mut out = Vec::new();
    raycast_into(origin, endpoint, resolution, &mut out);
    out
}

/// Same as [`raycast_voxels`] but reuses `out` (cleared first).
pub fn raycast_into<T: Real>(origin: &Vec3<T>, endpoint: &Vec3<T>, resolution: T, out: &mut Vec<VoxelKey>) {
    out.clear();
    let start = VoxelKey::from_point(origin, resolution);
    let goal = VoxelKey::from_point(endpoint, resolution);
    if start == goal {
        return;
    }

    let mut cur = start.as_array();
    let target = goal.as_array();
    let mut step = [0i32; 3];
    let mut t_max = [T::infinity(); 3];
    let mut t_delta = [T::infinity(); 3];
    for a in 0..3 {
        let d = endpoint[a] - origin[a];
        step[a] = (target[a] - cur[a]).signum();
        if step[a] == 0 || d == T::zero() {
            continue;
        }
        let idx = T::lit(index_of(origin[a], resolution) as f64);
        let boundary = if step[a] > 0 { (idx + T::one()) * resolution } else { idx * resolution };
        t_max[a] = ((boundary - origin[a]) / d).max(T::zero());
        t_delta[a] = resolution / d.abs();
    }

    let total = (0..3).map(|a| (target[a] - cur[a]).unsigned_abs() as usize).sum::<usize>();
    out.reserve(total);
    out.push(start);
    for n in 0..total {
        let mut axis = usize::MAX;
        for a in 0..3 {
            if cur[a] == target[a] {
                continue;
            }
            if axis == usize::MAX || t_max[a] < t_max[axis] {
                axis = a;
            }
        }
        cur[axis] += step[axis];
        t_max[axis] = t_max[axis] + t_delta[axis];
        if n + 1 < total {
            out.push(VoxelKey::from(cur));
        }
    }
}
