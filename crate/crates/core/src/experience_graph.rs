//! Sparse keypose graph holding overlapping, labelled local submaps.
//!
//! Local map snapshots taken between two training cycles are stitched into
//! a [`MapBatch`] (newest snapshot wins per voxel) and annotated with the
//! current collision posterior. The batch then allocates new keypose nodes
//! and is merged voxel-wise into every node whose cylinder it overlaps.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collision_map::{classify, CollisionMap, LabeledVoxel, Pose};
use crate::error::{Error, Result};
use crate::real::{Real, Vec3};
use crate::voxel_map::{
    key_map, Cylinder, FeatureParams, FeatureSource, FeatureVector, KeyMap, MapConfig, Voxel, VoxelKey, VoxelMap,
    VoxelRecord, MAP_FORMAT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StampedPose<T> {
    pub t: T,
    pub pose: Pose<T>,
}

/// A local map captured at time `t`.
#[derive(Clone, Debug)]
pub struct Snapshot<T> {
    pub t: T,
    pub map: VoxelMap<T>,
}

/// Voxel statistics with the collision posterior attached.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelledStats<T> {
    pub voxel: Voxel<T>,
    pub p_ntr: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct BatchEntry<T> {
    stats: LabelledStats<T>,
    /// Time of the snapshot the statistics were copied from.
    source_t: T,
}

/// Fused map data for one training-cycle interval `(t_start, t_end]`.
#[derive(Clone, Debug)]
pub struct MapBatch<T> {
    config: MapConfig<T>,
    voxels: KeyMap<BatchEntry<T>>,
    pub poses: Vec<StampedPose<T>>,
    pub interval: (T, T),
}

impl<T: Real> MapBatch<T> {
    pub fn new(config: MapConfig<T>, interval: (T, T)) -> Self {
        Self { config, voxels: key_map(), poses: Vec::new(), interval }
    }

    pub fn config(&self) -> &MapConfig<T> {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&LabelledStats<T>> {
        self.voxels.get(key).map(|e| &e.stats)
    }

    pub fn keys_sorted(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.voxels.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &LabelledStats<T>)> {
        self.voxels.iter().map(|(k, e)| (k, &e.stats))
    }

    /// Stitches one snapshot in. A voxel already present from a snapshot
    /// taken at the same time or later keeps its statistics.
    pub fn absorb_snapshot(&mut self, t: T, map: &VoxelMap<T>) {
        for (key, v) in map.iter() {
            self.absorb(*key, BatchEntry { stats: LabelledStats { voxel: *v, p_ntr: T::lit(0.5) }, source_t: t });
        }
    }

    fn absorb(&mut self, key: VoxelKey, entry: BatchEntry<T>) {
        match self.voxels.get_mut(&key) {
            Some(existing) if existing.source_t > entry.source_t => {}
            Some(existing) => *existing = entry,
            None => {
                self.voxels.insert(key, entry);
            }
        }
    }

    /// Sets every voxel's label probability from the collision map.
    pub fn annotate(&mut self, cmap: &CollisionMap<T>) {
        for (key, e) in self.voxels.iter_mut() {
            e.stats.p_ntr = cmap.p_ntr(key);
        }
    }

    /// Merges batches into one, re-fusing newest-wins and concatenating
    /// poses in time order.
    pub fn merge(batches: Vec<MapBatch<T>>) -> Option<MapBatch<T>> {
        let mut iter = batches.into_iter();
        let mut out = iter.next()?;
        for b in iter {
            out.interval.0 = out.interval.0.min(b.interval.0);
            out.interval.1 = out.interval.1.max(b.interval.1);
            let mut keys: Vec<_> = b.voxels.keys().copied().collect();
            keys.sort_unstable();
            for k in keys {
                out.absorb(k, b.voxels[&k]);
            }
            out.poses.extend(b.poses);
        }
        out.poses.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap_or(std::cmp::Ordering::Equal));
        Some(out)
    }
}

impl<T: Real> FeatureSource<T> for MapBatch<T> {
    fn features_at(&self, key: &VoxelKey) -> Option<FeatureVector<T>> {
        self.voxels.get(key)?.stats.voxel.features(&self.config.feature_params())
    }
}

/// Fuses time-ordered snapshots newest-wins and attaches collision posteriors.
pub fn build_map_batch<T: Real>(
    config: MapConfig<T>,
    snapshots: &[Snapshot<T>],
    cmap: &CollisionMap<T>,
    poses: Vec<StampedPose<T>>,
    interval: (T, T),
) -> MapBatch<T> {
    let mut batch = MapBatch::new(config, interval);
    for s in snapshots {
        batch.absorb_snapshot(s.t, &s.map);
    }
    batch.poses = poses;
    batch.annotate(cmap);
    batch
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams<T> {
    pub d_node: T,
    pub r_max: T,
    pub z_min: T,
    pub z_max: T,
    /// Added below `z_min` and above `z_max`.
    pub z_padding: T,
}

impl<T: Real> Default for GraphParams<T> {
    fn default() -> Self {
        Self {
            d_node: T::lit(0.5),
            r_max: T::lit(2.0),
            z_min: T::lit(-0.5),
            z_max: T::lit(0.8),
            z_padding: T::lit(0.2),
        }
    }
}

impl<T: Real> GraphParams<T> {
    pub fn cylinder(&self, center: Vec3<T>) -> Cylinder<T> {
        Cylinder {
            center,
            r_max: self.r_max,
            z_min: self.z_min - self.z_padding,
            z_max: self.z_max + self.z_padding,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphNode<T> {
    pub id: u32,
    pub position: Vec3<T>,
    pub submap: KeyMap<LabelledStats<T>>,
    features: FeatureParams<T>,
}

impl<T: Real> GraphNode<T> {
    pub fn keys_sorted(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.submap.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Labelled voxels of this node, in key order.
    pub fn labels(&self, tr_threshold: T, ntr_threshold: T) -> Vec<LabeledVoxel<T>> {
        self.keys_sorted()
            .into_iter()
            .filter_map(|key| {
                let s = &self.submap[&key];
                let label = classify(s.p_ntr, tr_threshold, ntr_threshold)?;
                let features = s.voxel.features(&self.features)?;
                Some(LabeledVoxel { key, label, features })
            })
            .collect()
    }
}

impl<T: Real> FeatureSource<T> for GraphNode<T> {
    fn features_at(&self, key: &VoxelKey) -> Option<FeatureVector<T>> {
        self.submap.get(key)?.voxel.features(&self.features)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphUpdate {
    pub new_nodes: usize,
    pub nodes_touched: usize,
    pub voxels_inserted: usize,
    pub voxels_replaced: usize,
}

/// The experience graph.
#[derive(Clone, Debug)]
pub struct OGraph<T> {
    params: GraphParams<T>,
    map_config: MapConfig<T>,
    nodes: Vec<GraphNode<T>>,
    /// Trajectory order: each new node links to the previously created one.
    edges: Vec<(u32, u32)>,
    /// Node indices bucketed on a horizontal grid of pitch `r_max`.
    buckets: HashMap<(i32, i32), Vec<usize>>,
}

impl<T: Real> OGraph<T> {
    pub fn new(params: GraphParams<T>, map_config: MapConfig<T>) -> Self {
        Self { params, map_config, nodes: Vec::new(), edges: Vec::new(), buckets: HashMap::new() }
    }

    pub fn params(&self) -> &GraphParams<T> {
        &self.params
    }

    pub fn map_config(&self) -> &MapConfig<T> {
        &self.map_config
    }

    pub fn nodes(&self) -> &[GraphNode<T>] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> Option<&GraphNode<T>> {
        self.nodes.get(id as usize)
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn stored_voxels(&self) -> usize {
        self.nodes.iter().map(|n| n.submap.len()).sum()
    }

    fn bucket_of(&self, p: &Vec3<T>) -> (i32, i32) {
        let pitch = self.params.r_max.max(self.params.d_node);
        ((p[0] / pitch).floor().to_i32().unwrap_or(0), (p[1] / pitch).floor().to_i32().unwrap_or(0))
    }

    /// Indices of nodes in the 3×3 buckets around `p`; covers every node
    /// within `max(r_max, d_node)` horizontally.
    fn nearby(&self, p: &Vec3<T>) -> impl Iterator<Item = usize> + '_ {
        let (bi, bj) = self.bucket_of(p);
        (-1..=1).flat_map(move |di| {
            (-1..=1).flat_map(move |dj| self.buckets.get(&(bi + di, bj + dj)).into_iter().flatten().copied())
        })
    }

    fn push_node(&mut self, position: Vec3<T>) -> u32 {
        let id = self.nodes.len() as u32;
        let features = self.map_config.feature_params();
        self.nodes.push(GraphNode { id, position, submap: key_map(), features });
        let b = self.bucket_of(&position);
        self.buckets.entry(b).or_default().push(id as usize);
        if id > 0 {
            self.edges.push((id - 1, id));
        }
        id
    }

    /// Spawns a node at every pose (in the given, time-ascending order)
    /// farther than `d_node` from all existing nodes.
    pub fn allocate_nodes(&mut self, poses: &[StampedPose<T>]) -> Vec<u32> {
        let d2 = self.params.d_node * self.params.d_node;
        let mut created = Vec::new();
        for sp in poses {
            let p = sp.pose.position;
            let far = self.nearby(&p).all(|n| dist2(&self.nodes[n].position, &p) > d2);
            if far {
                created.push(self.push_node(p));
            }
        }
        created
    }

    /// Allocates nodes for the batch poses, then merges every batch voxel
    /// into each node whose cylinder contains its center: statistics are
    /// replaced only by strictly newer ones, label probabilities always.
    pub fn update_graph(&mut self, batch: &MapBatch<T>) -> GraphUpdate {
        let mut report = GraphUpdate { new_nodes: self.allocate_nodes(&batch.poses).len(), ..Default::default() };
        let res = self.map_config.resolution;
        let mut touched = vec![false; self.nodes.len()];
        for key in batch.keys_sorted() {
            let stats = batch.voxels[&key].stats;
            let c = key.center(res);
            let hits: Vec<usize> =
                self.nearby(&c).filter(|&n| self.params.cylinder(self.nodes[n].position).contains(&c)).collect();
            for n in hits {
                touched[n] = true;
                let node = &mut self.nodes[n];
                match node.submap.get_mut(&key) {
                    Some(stored) => {
                        if stats.voxel.last_update > stored.voxel.last_update {
                            stored.voxel = stats.voxel;
                            report.voxels_replaced += 1;
                        }
                        stored.p_ntr = stats.p_ntr;
                    }
                    None => {
                        node.submap.insert(key, stats);
                        report.voxels_inserted += 1;
                    }
                }
            }
        }
        report.nodes_touched = touched.iter().filter(|t| **t).count();
        report
    }

    /// One sample per node holding at least one label. The node itself is
    /// the feature context, so unlabeled neighbors stay visible.
    pub fn training_samples(&self, tr_threshold: T, ntr_threshold: T) -> Vec<NodeSample<'_, T>> {
        self.nodes
            .iter()
            .filter_map(|node| {
                let labels = node.labels(tr_threshold, ntr_threshold);
                (!labels.is_empty()).then_some(NodeSample { node, labels })
            })
            .collect()
    }

    /// Writes `index.json` plus one `node_<id>.jsonl` per node.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let index = CheckpointIndex {
            nodes: self.nodes.iter().map(|n| IndexNode { id: n.id, pos: n.position }).collect(),
            params: self.params,
            resolution: self.map_config.resolution,
            format_version: MAP_FORMAT_VERSION,
        };
        let mut w = BufWriter::new(File::create(dir.join("index.json"))?);
        serde_json::to_writer(&mut w, &index)?;
        w.write_all(b"\n")?;
        w.flush()?;
        for node in &self.nodes {
            let mut w = BufWriter::new(File::create(dir.join(format!("node_{}.jsonl", node.id)))?);
            serde_json::to_writer(&mut w, &SubmapHeader { resolution: self.map_config.resolution, format_version: MAP_FORMAT_VERSION })?;
            w.write_all(b"\n")?;
            for key in node.keys_sorted() {
                let s = &node.submap[&key];
                serde_json::to_writer(&mut w, &NodeVoxelRecord::new(key, s))?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let index: CheckpointIndex<T> = serde_json::from_reader(BufReader::new(File::open(dir.join("index.json"))?))?;
        if index.format_version != MAP_FORMAT_VERSION {
            return Err(Error::Version { what: "graph checkpoint", found: index.format_version });
        }
        let mut graph = OGraph::new(index.params, MapConfig::with_resolution(index.resolution));
        for (n, entry) in index.nodes.iter().enumerate() {
            if entry.id as usize != n {
                return Err(Error::Format { what: "graph index", line: 1, reason: format!("node id {} out of order", entry.id) });
            }
            graph.push_node(entry.pos);
            let file = BufReader::new(File::open(dir.join(format!("node_{}.jsonl", entry.id)))?);
            for (line_no, line) in file.lines().enumerate().skip(1) {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: NodeVoxelRecord<T> = serde_json::from_str(&line).map_err(|e| Error::Format {
                    what: "graph node voxel",
                    line: line_no + 1,
                    reason: e.to_string(),
                })?;
                let (key, stats) = rec.into_parts();
                graph.nodes[n].submap.insert(key, stats);
            }
        }
        Ok(graph)
    }
}

pub struct NodeSample<'a, T> {
    pub node: &'a GraphNode<T>,
    pub labels: Vec<LabeledVoxel<T>>,
}

fn dist2<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

#[derive(Serialize, Deserialize)]
struct IndexNode<T> {
    id: u32,
    pos: Vec3<T>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointIndex<T> {
    nodes: Vec<IndexNode<T>>,
    params: GraphParams<T>,
    resolution: T,
    format_version: u32,
}

#[derive(Serialize, Deserialize)]
struct SubmapHeader<T> {
    resolution: T,
    format_version: u32,
}

/// Voxel record plus its label probability `p`.
#[derive(Serialize, Deserialize)]
struct NodeVoxelRecord<T> {
    key: VoxelKey,
    lo: T,
    n: u32,
    sp: [T; 3],
    sppt: [T; 6],
    nh: u32,
    nm: u32,
    si: T,
    si2: T,
    nmr: u32,
    t: T,
    p: T,
}

impl<T: Real> NodeVoxelRecord<T> {
    fn new(key: VoxelKey, s: &LabelledStats<T>) -> Self {
        let r = VoxelRecord::from_voxel(key, &s.voxel);
        Self { key, lo: r.lo, n: r.n, sp: r.sp, sppt: r.sppt, nh: r.nh, nm: r.nm, si: r.si, si2: r.si2, nmr: r.nmr, t: r.t, p: s.p_ntr }
    }

    fn into_parts(self) -> (VoxelKey, LabelledStats<T>) {
        let r = VoxelRecord {
            key: self.key,
            lo: self.lo,
            n: self.n,
            sp: self.sp,
            sppt: self.sppt,
            nh: self.nh,
            nm: self.nm,
            si: self.si,
            si2: self.si2,
            nmr: self.nmr,
            t: self.t,
        };
        (self.key, LabelledStats { voxel: r.to_voxel(), p_ntr: self.p })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision_map::{CollisionConfig, CollisionEvent, RobotDims, TraversalState};

    fn pose(x: f64, y: f64, t: f64) -> StampedPose<f64> {
        StampedPose { t, pose: Pose::from_yaw([x, y, 0.0], 0.0) }
    }

    fn voxel(n_hit: u32, t: f64) -> Voxel<f64> {
        Voxel { n_hit, n_endpoints: n_hit, last_update: t, ..Default::default() }
    }

    fn cmap() -> CollisionMap<f64> {
        CollisionMap::new(CollisionConfig::default(), RobotDims::default(), 0.1)
    }

    fn snapshot(t: f64, entries: &[(VoxelKey, Voxel<f64>)]) -> Snapshot<f64> {
        let mut map = VoxelMap::with_resolution(0.1);
        for (k, v) in entries {
            map.insert(*k, *v);
        }
        Snapshot { t, map }
    }

    #[test]
    fn batch_newest_snapshot_wins() {
        let k = VoxelKey::new(1, 2, 0);
        let snaps = vec![snapshot(10.0, &[(k, voxel(3, 10.0))]), snapshot(20.0, &[(k, voxel(7, 20.0))])];
        let batch = build_map_batch(MapConfig::default(), &snaps, &cmap(), vec![], (0.0, 40.0));
        assert_eq!(batch.get(&k).unwrap().voxel.n_hit, 7);
        assert_eq!(batch.get(&k).unwrap().p_ntr, 0.5);

        let single = build_map_batch(MapConfig::default(), &snaps[..1], &cmap(), vec![], (0.0, 40.0));
        assert_eq!(single.len(), 1);
        assert_eq!(single.get(&k).unwrap().voxel, voxel(3, 10.0));

        let empty = build_map_batch(MapConfig::<f64>::default(), &[], &cmap(), vec![], (0.0, 40.0));
        assert!(empty.is_empty());
    }

    #[test]
    fn batch_carries_collision_posterior() {
        let k = VoxelKey::new(0, 0, 0);
        let mut cm = cmap();
        cm.apply_event(&CollisionEvent { t: 1.0, pose: Pose::from_yaw([0.05, 0.05, 0.0], 0.0), state: TraversalState::Traversable });
        let batch = build_map_batch(MapConfig::default(), &[snapshot(5.0, &[(k, voxel(1, 5.0))])], &cm, vec![], (0.0, 40.0));
        assert!((batch.get(&k).unwrap().p_ntr - 0.3).abs() < 1e-12);
    }

    #[test]
    fn allocation_on_a_straight_line() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let poses: Vec<_> = (0..=10).map(|n| pose(0.2 * n as f64, 0.0, n as f64)).collect();
        let ids = g.allocate_nodes(&poses);
        assert_eq!(ids, vec![0, 1, 2, 3]);
        let xs: Vec<f64> = g.nodes().iter().map(|n| n.position[0]).collect();
        for (x, want) in xs.iter().zip([0.0, 0.6, 1.2, 1.8]) {
            assert!((x - want).abs() < 1e-9);
        }
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
        // All within d_node of an existing node.
        assert!(g.allocate_nodes(&[pose(0.1, 0.1, 20.0), pose(1.5, 0.0, 21.0)]).is_empty());

        let mut g = OGraph::<f64>::new(GraphParams::default(), MapConfig::default());
        assert_eq!(g.allocate_nodes(&[pose(3.0, 3.0, 0.0)]).len(), 1);
    }

    fn batch_with(poses: Vec<StampedPose<f64>>, entries: &[(VoxelKey, Voxel<f64>, f64)]) -> MapBatch<f64> {
        let mut b = MapBatch::new(MapConfig::default(), (0.0, 40.0));
        for (k, v, p) in entries {
            b.voxels.insert(*k, BatchEntry { stats: LabelledStats { voxel: *v, p_ntr: *p }, source_t: v.last_update });
        }
        b.poses = poses;
        b
    }

    #[test]
    fn overlapping_nodes_both_receive_voxel() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let k = VoxelKey::new(10, 0, 0); // center x = 1.05
        let b = batch_with(vec![pose(0.0, 0.0, 1.0), pose(2.0, 0.0, 2.0)], &[(k, voxel(2, 1.0), 0.5)]);
        let r = g.update_graph(&b);
        assert_eq!(r.new_nodes, 2);
        assert!(g.nodes().iter().all(|n| n.submap.contains_key(&k)));
        assert_eq!(r.voxels_inserted, 2);
    }

    #[test]
    fn older_statistics_never_overwrite_but_labels_do() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let k = VoxelKey::new(1, 0, 0);
        g.update_graph(&batch_with(vec![pose(0.0, 0.0, 1.0)], &[(k, voxel(5, 30.0), 0.3)]));
        g.update_graph(&batch_with(vec![], &[(k, voxel(9, 10.0), 0.9)]));
        let s = g.nodes()[0].submap[&k];
        assert_eq!(s.voxel.n_hit, 5);
        assert_eq!(s.p_ntr, 0.9);
    }

    #[test]
    fn label_flip_follows_latest_posterior() {
        // Replay two batches around one voxel: a pass, then repeated collisions.
        let k = VoxelKey::new(0, 0, 0);
        let mut cm = cmap();
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let tr = CollisionEvent { t: 1.0, pose: Pose::from_yaw([0.05, 0.05, 0.0], 0.0), state: TraversalState::Traversable };
        cm.apply_event(&tr);
        let b1 = build_map_batch(MapConfig::default(), &[snapshot(1.0, &[(k, voxel(1, 1.0))])], &cm, vec![pose(0.0, 0.0, 1.0)], (0.0, 40.0));
        g.update_graph(&b1);
        assert_eq!(g.nodes()[0].labels(0.4, 0.6)[0].label, TraversalState::Traversable);
        let ntr = CollisionEvent { t: 50.0, pose: Pose::from_yaw([-0.35, 0.05, 0.0], 0.0), state: TraversalState::NonTraversable };
        cm.apply_event(&ntr);
        cm.apply_event(&ntr);
        let b2 = build_map_batch(MapConfig::default(), &[snapshot(50.0, &[(k, voxel(2, 50.0))])], &cm, vec![], (40.0, 80.0));
        g.update_graph(&b2);
        let stored = g.nodes()[0].submap[&k];
        assert!((stored.p_ntr - cm.p_ntr(&k)).abs() < 1e-15);
        assert_eq!(g.nodes()[0].labels(0.4, 0.6)[0].label, TraversalState::NonTraversable);
    }

    #[test]
    fn reapplying_a_batch_is_idempotent() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let entries: Vec<_> = (0..30).map(|n| (VoxelKey::new(n - 15, n % 4, 0), voxel(1 + n as u32, n as f64), 0.2)).collect();
        let b = batch_with(vec![pose(0.0, 0.0, 1.0), pose(1.0, 0.0, 2.0)], &entries);
        g.update_graph(&b);
        let before: Vec<_> = g.nodes().iter().map(|n| (n.position, n.keys_sorted(), n.submap.clone())).collect();
        let r = g.update_graph(&b);
        assert_eq!((r.new_nodes, r.voxels_inserted, r.voxels_replaced), (0, 0, 0));
        let after: Vec<_> = g.nodes().iter().map(|n| (n.position, n.keys_sorted(), n.submap.clone())).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn containment_respects_padded_cylinder() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let inside = VoxelKey::new(0, 0, 9); // center z 0.95 ≤ 1.0
        let above = VoxelKey::new(0, 0, 10); // 1.05
        let below = VoxelKey::new(0, 0, -7); // -0.65 ≥ -0.7
        let far = VoxelKey::new(25, 0, 0);
        let v = voxel(1, 1.0);
        g.update_graph(&batch_with(vec![pose(0.0, 0.0, 1.0)], &[(inside, v, 0.5), (above, v, 0.5), (below, v, 0.5), (far, v, 0.5)]));
        let keys = g.nodes()[0].keys_sorted();
        assert_eq!(keys, vec![below, inside]);
    }

    #[test]
    fn training_samples_cases() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let miss_only = Voxel { n_miss: 3, last_update: 1.0, ..Default::default() };
        // No collision data: every label probability at the prior.
        let prior: Vec<_> = (0..5).map(|n| (VoxelKey::new(n, 0, 0), miss_only, 0.5)).collect();
        g.update_graph(&batch_with(vec![pose(0.0, 0.0, 1.0)], &prior));
        assert!(g.training_samples(0.4, 0.6).is_empty());

        let mut entries: Vec<_> = (0..5).map(|n| (VoxelKey::new(n, 1, 0), miss_only, 0.9)).collect();
        entries.extend((0..20).map(|n| (VoxelKey::new(n - 10, -1, 0), miss_only, 0.1)));
        g.update_graph(&batch_with(vec![], &entries));
        let samples = g.training_samples(0.4, 0.6);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].labels.len(), 25);
        assert!(samples[0].node.submap.len() > 25);

        // Second node sharing a labelled voxel: it appears in both samples.
        let shared = VoxelKey::new(10, 0, 0);
        g.update_graph(&batch_with(vec![pose(2.0, 0.0, 2.0)], &[(shared, miss_only, 0.9)]));
        let samples = g.training_samples(0.4, 0.6);
        let count = samples.iter().filter(|s| s.labels.iter().any(|l| l.key == shared)).count();
        assert_eq!(count, 2);
    }

    #[test]
    fn merged_batches_keep_newest_and_concatenate_poses() {
        let k = VoxelKey::new(0, 0, 0);
        let mut a = batch_with(vec![pose(0.0, 0.0, 1.0)], &[(k, voxel(1, 5.0), 0.5)]);
        a.voxels.get_mut(&k).unwrap().source_t = 5.0;
        let b = batch_with(vec![pose(1.0, 0.0, 41.0)], &[(k, voxel(4, 45.0), 0.5)]);
        let m = MapBatch::merge(vec![a.clone()]).unwrap();
        assert_eq!(m.get(&k), a.get(&k));
        let m = MapBatch::merge(vec![a, b]).unwrap();
        assert_eq!(m.get(&k).unwrap().voxel.n_hit, 4);
        assert_eq!(m.poses.iter().map(|p| p.t).collect::<Vec<_>>(), vec![1.0, 41.0]);
        assert_eq!(m.interval, (0.0, 40.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut g = OGraph::new(GraphParams::default(), MapConfig::default());
        let entries: Vec<_> = (0..12).map(|n| (VoxelKey::new(n, -n, n % 3), voxel(n as u32 + 1, 0.5 * n as f64), 0.1 * (n % 10) as f64)).collect();
        g.update_graph(&batch_with(vec![pose(0.0, 0.0, 1.0), pose(0.9, -0.9, 2.0)], &entries));
        let dir = tempfile::tempdir().unwrap();
        g.save_checkpoint(dir.path()).unwrap();
        let index = std::fs::read_to_string(dir.path().join("index.json")).unwrap();
        assert!(index.contains("\"nodes\":[{\"id\":0,\"pos\":[") && index.contains("\"d_node\":0.5"));
        let back: OGraph<f64> = OGraph::load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.nodes().len(), g.nodes().len());
        for (a, b) in g.nodes().iter().zip(back.nodes()) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.submap, b.submap);
        }
        assert_eq!(back.edges(), g.edges());
    }
}
