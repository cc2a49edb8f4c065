use std::hash::{BuildHasherDefault, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::real::{Real, Vec3};

/// Integer index of a cubic cell; the cell spans `[i·res, (i+1)·res)` on each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn from_point<T: Real>(p: &Vec3<T>, resolution: T) -> Self {
        Self {
            i: index_of(p[0], resolution),
            j: index_of(p[1], resolution),
            k: index_of(p[2], resolution),
        }
    }

    pub fn center<T: Real>(&self, resolution: T) -> Vec3<T> {
        let half = T::lit(0.5);
        [
            (T::lit(self.i as f64) + half) * resolution,
            (T::lit(self.j as f64) + half) * resolution,
            (T::lit(self.k as f64) + half) * resolution,
        ]
    }

    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    pub fn as_array(&self) -> [i32; 3] {
        [self.i, self.j, self.k]
    }
}

impl From<[i32; 3]> for VoxelKey {
    fn from(a: [i32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<VoxelKey> for [i32; 3] {
    fn from(k: VoxelKey) -> Self {
        k.as_array()
    }
}

#[inline]
pub(crate) fn index_of<T: Real>(x: T, resolution: T) -> i32 {
    (x / resolution).floor().to_i32().unwrap_or(i32::MIN)
}

impl Hash for VoxelKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        let mix = (self.i as u32 as u64).wrapping_mul(PRIMES[0])
            ^ (self.j as u32 as u64).wrapping_mul(PRIMES[1])
            ^ (self.k as u32 as u64).wrapping_mul(PRIMES[2]);
        state.write_u64(mix);
    }
}

const PRIMES: [u64; 3] = [73_856_093, 19_349_663, 83_492_791];

/// Finalizes the prime-multiply spatial hash with a 64-bit avalanche so the
/// high bits used by the table are well spread.
///
/// Unlike `RandomState` it is seedless: map iteration order is a pure
/// function of the insertion history.
#[derive(Default, Clone, Copy)]
pub struct SpatialHasher {
    state: u64,
}

impl Hasher for SpatialHasher {
    fn finish(&self) -> u64 {
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state = (self.state.rotate_left(8) ^ u64::from(b)).wrapping_mul(PRIMES[0]);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.state = self.state.rotate_left(21) ^ v;
    }
}

pub type KeyBuildHasher = BuildHasherDefault<SpatialHasher>;
pub type KeyMap<V> = std::collections::HashMap<VoxelKey, V, KeyBuildHasher>;

pub fn key_map<V>() -> KeyMap<V> {
    KeyMap::with_hasher(KeyBuildHasher::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::hash::BuildHasher;

    #[test]
    fn point_to_key_uses_floor() {
        assert_eq!(VoxelKey::from_point(&[0.05, 0.05, 0.05], 0.1), VoxelKey::new(0, 0, 0));
        assert_eq!(VoxelKey::from_point(&[-0.05, 0.15, 0.35], 0.1), VoxelKey::new(-1, 1, 3));
    }

    #[test]
    fn center_round_trips() {
        for key in [VoxelKey::new(0, 0, 0), VoxelKey::new(-7, 3, 12), VoxelKey::new(150, -150, -2)] {
            let c = key.center(0.1f64);
            assert_eq!(VoxelKey::from_point(&c, 0.1), key);
        }
    }

    #[test]
    fn hasher_separates_axis_permutations() {
        let b = KeyBuildHasher::default();
        let h = |k: VoxelKey| {
            let mut s = b.build_hasher();
            k.hash(&mut s);
            s.finish()
        };
        assert_ne!(h(VoxelKey::new(1, 2, 3)), h(VoxelKey::new(3, 2, 1)));
        assert_ne!(h(VoxelKey::new(1, 0, 0)), h(VoxelKey::new(0, 1, 0)));
        assert_eq!(h(VoxelKey::new(5, -4, 2)), h(VoxelKey::new(5, -4, 2)));
    }
}
