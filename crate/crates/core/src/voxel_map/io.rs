//! JSON Lines snapshot format: a header line `{resolution, format_version}`
//! followed by one voxel per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MapConfig, Voxel, VoxelKey, VoxelMap};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAP_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<T> {
    resolution: T,
    format_version: u32,
}

/// One serialized voxel. `sp`/`sppt` are sums of endpoint offsets from the
/// voxel center; `sppt` is the upper triangle `xx, xy, xz, yy, yz, zz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelRecord<T> {
    pub key: VoxelKey,
    pub lo: T,
    pub n: u32,
    pub sp: [T; 3],
    pub sppt: [T; 6],
    pub nh: u32,
    pub nm: u32,
    pub si: T,
    pub si2: T,
    pub nmr: u32,
    pub t: T,
}

impl<T: Real> VoxelRecord<T> {
    pub fn from_voxel(key: VoxelKey, v: &Voxel<T>) -> Self {
        Self {
            key,
            lo: v.log_odds_occ,
            n: v.n_endpoints,
            sp: v.sum_p,
            sppt: v.sum_ppt,
            nh: v.n_hit,
            nm: v.n_miss,
            si: v.sum_i,
            si2: v.sum_i2,
            nmr: v.n_second_returns,
            t: v.last_update,
        }
    }

    pub fn to_voxel(&self) -> Voxel<T> {
        Voxel {
            log_odds_occ: self.lo,
            n_endpoints: self.n,
            sum_p: self.sp,
            sum_ppt: self.sppt,
            n_hit: self.nh,
            n_miss: self.nm,
            sum_i: self.si,
            sum_i2: self.si2,
            n_second_returns: self.nmr,
            last_update: self.t,
        }
    }
}

/// Writes voxels sorted by key so equal maps serialize identically.
pub fn write_jsonl<T: Real, W: Write>(map: &VoxelMap<T>, mut w: W) -> Result<()> {
    let header = Header { resolution: map.resolution(), format_version: MAP_FORMAT_VERSION };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for key in map.keys_sorted() {
        let rec = VoxelRecord::from_voxel(key, map.get(&key).expect("key from map"));
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: Real, R: BufRead>(r: R) -> Result<VoxelMap<T>> {
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Format {
        what: "voxel map",
        line: 1,
        reason: "missing header".into(),
    })?;
    let header: Header<T> = serde_json::from_str(&first?).map_err(|e| Error::Format {
        what: "voxel map header",
        line: 1,
        reason: e.to_string(),
    })?;
    if header.format_version != MAP_FORMAT_VERSION {
        return Err(Error::Version { what: "voxel map", found: header.format_version });
    }
    let mut map = VoxelMap::new(MapConfig::with_resolution(header.resolution));
    for (n, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VoxelRecord<T> = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "voxel record",
            line: n + 1,
            reason: e.to_string(),
        })?;
        map.insert(rec.key, rec.to_voxel());
    }
    Ok(map)
}
