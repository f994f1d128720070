//! Ragged participant/day/electrode/time dataset with availability flags.
//!
//! Every participant has a fixed electrode set; on any given day some of
//! those electrodes may be missing entirely. Missing electrodes keep a
//! zeroed row so downstream tensors stay rectangular, with the availability
//! flags carrying the truth.
//!
//! On-disk layout: `manifest.json` plus `data/p{i}_d{j}_e{k}.f32` payloads of
//! 32-bit IEEE-754 little-endian samples (observed electrodes only).

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticipantId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DayId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElectrodeId(pub usize);

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for DayId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

impl fmt::Display for ElectrodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum RaggedError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{participant}/{day}/{electrode}: payload holds {actual} samples, day declares {expected}")]
    LengthMismatch {
        participant: ParticipantId,
        day: DayId,
        electrode: ElectrodeId,
        expected: usize,
        actual: usize,
    },
    #[error("{participant}/{day}/{electrode}: non-finite sample at index {index}")]
    NonFiniteSample {
        participant: ParticipantId,
        day: DayId,
        electrode: ElectrodeId,
        index: usize,
    },
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("unknown day {day} for participant {participant}")]
    UnknownDay { participant: ParticipantId, day: DayId },
}

/// Partition of a participant's electrode set on one day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilitySets {
    pub observed: Vec<ElectrodeId>,
    pub missing: Vec<ElectrodeId>,
}

impl AvailabilitySets {
    /// True when not a single electrode was recorded that day.
    pub fn is_degenerate(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, e: ElectrodeId) -> bool {
        self.observed.binary_search(&e).is_ok()
    }
}

/// One recording day: a sample count, a rate, and one optional payload per
/// electrode (`None` = naturally missing).
#[derive(Debug, Clone)]
pub struct DayRecord {
    pub rate_hz: f64,
    pub samples: usize,
    channels: Vec<Option<Vec<f32>>>,
}

impl DayRecord {
    pub fn channel(&self, e: ElectrodeId) -> Option<&[f32]> {
        self.channels[e.0].as_deref()
    }
}

#[derive(Debug, Clone)]
struct ParticipantRecord {
    electrode_count: usize,
    days: Vec<DayRecord>,
}

/// In-memory ragged dataset. Immutable after validation aside from the
/// explicit failure-simulation helper.
#[derive(Debug, Clone, Default)]
pub struct RaggedRecording {
    participants: Vec<ParticipantRecord>,
}

/// 3-D electrode positions in millimeters, `positions[participant][electrode]`.
#[derive(Debug, Clone, Default)]
pub struct ElectrodeGeometry {
    pub positions: Vec<Vec<[f64; 3]>>,
}

impl ElectrodeGeometry {
    pub fn position(&self, p: ParticipantId, e: ElectrodeId) -> [f64; 3] {
        self.positions[p.0][e.0]
    }
}

// ── manifest schema ─────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct Manifest {
    participants: Vec<ManifestParticipant>,
}

#[derive(Serialize, Deserialize)]
struct ManifestParticipant {
    id: usize,
    electrode_count: usize,
    geometry: Vec<[f64; 3]>,
    days: Vec<ManifestDay>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDay {
    id: usize,
    samples: usize,
    rate_hz: f64,
    #[serde(default)]
    missing: Vec<usize>,
}

impl RaggedRecording {
    /// Assemble a dataset in memory. `participants[p]` holds the electrode
    /// count and, per day, `(rate_hz, channels)` where `channels[e]` is
    /// `None` for a naturally-missing electrode.
    pub fn from_parts(
        participants: Vec<(usize, Vec<(f64, Vec<Option<Vec<f32>>>)>)>,
    ) -> Result<Self, RaggedError> {
        let mut out = Vec::with_capacity(participants.len());
        for (pi, (electrode_count, days)) in participants.into_iter().enumerate() {
            let p = ParticipantId(pi);
            let mut day_records = Vec::with_capacity(days.len());
            for (di, (rate_hz, channels)) in days.into_iter().enumerate() {
                let day = DayId(di);
                if channels.len() != electrode_count {
                    return Err(RaggedError::Manifest(format!(
                        "{p}/{day}: {} channels, expected {electrode_count}",
                        channels.len()
                    )));
                }
                let samples = channels
                    .iter()
                    .flatten()
                    .map(|c| c.len())
                    .next()
                    .unwrap_or(0);
                for (ei, ch) in channels.iter().enumerate() {
                    if let Some(data) = ch {
                        if data.len() != samples {
                            return Err(RaggedError::LengthMismatch {
                                participant: p,
                                day,
                                electrode: ElectrodeId(ei),
                                expected: samples,
                                actual: data.len(),
                            });
                        }
                        if let Some(ix) = data.iter().position(|v| !v.is_finite()) {
                            return Err(RaggedError::NonFiniteSample {
                                participant: p,
                                day,
                                electrode: ElectrodeId(ei),
                                index: ix,
                            });
                        }
                    }
                }
                day_records.push(DayRecord {
                    rate_hz,
                    samples,
                    channels,
                });
            }
            out.push(ParticipantRecord {
                electrode_count,
                days: day_records,
            });
        }
        Ok(RaggedRecording { participants: out })
    }

    pub fn participant_count(&self) -> usize {
        self.participants.len()
    }

    pub fn participants(&self) -> impl Iterator<Item = ParticipantId> {
        (0..self.participants.len()).map(ParticipantId)
    }

    pub fn electrode_count(&self, p: ParticipantId) -> usize {
        self.participants[p.0].electrode_count
    }

    pub fn day_count(&self, p: ParticipantId) -> usize {
        self.participants[p.0].days.len()
    }

    /// The held-out test day: always the last recorded day.
    pub fn test_day(&self, p: ParticipantId) -> DayId {
        DayId(self.day_count(p) - 1)
    }

    pub fn train_days(&self, p: ParticipantId) -> Vec<DayId> {
        (0..self.day_count(p).saturating_sub(1)).map(DayId).collect()
    }

    pub fn day(&self, p: ParticipantId, d: DayId) -> Result<&DayRecord, RaggedError> {
        let pr = self
            .participants
            .get(p.0)
            .ok_or(RaggedError::UnknownParticipant(p))?;
        pr.days
            .get(d.0)
            .ok_or(RaggedError::UnknownDay { participant: p, day: d })
    }

    /// Partition the electrode set into observed and naturally-missing.
    pub fn availability(&self, p: ParticipantId, d: DayId) -> Result<AvailabilitySets, RaggedError> {
        let day = self.day(p, d)?;
        let mut observed = Vec::new();
        let mut missing = Vec::new();
        for (ei, ch) in day.channels.iter().enumerate() {
            if ch.is_some() {
                observed.push(ElectrodeId(ei));
            } else {
                missing.push(ElectrodeId(ei));
            }
        }
        let sets = AvailabilitySets { observed, missing };
        if sets.is_degenerate() {
            log::warn!("{p}/{d}: every electrode is missing");
        }
        Ok(sets)
    }

    /// Cut a day into `electrodes x window_len` tensors. Missing electrodes
    /// appear as zero rows; trailing samples that do not fill a window are
    /// dropped. A window longer than the day yields an empty list.
    pub fn slice_instances(
        &self,
        p: ParticipantId,
        d: DayId,
        window_len: usize,
        stride: usize,
    ) -> Result<Vec<Tensor>, RaggedError> {
        assert!(window_len > 0 && stride > 0);
        let day = self.day(p, d)?;
        let k = self.electrode_count(p);
        if day.samples < window_len {
            log::warn!(
                "{p}/{d}: window of {window_len} exceeds day length {}; no instances",
                day.samples
            );
            return Ok(Vec::new());
        }
        let count = (day.samples - window_len) / stride + 1;
        let mut out = Vec::with_capacity(count);
        for w in 0..count {
            let start = w * stride;
            let mut t = Tensor::zeros(&[k, window_len]);
            for (ei, ch) in day.channels.iter().enumerate() {
                if let Some(data) = ch {
                    let dst = t.row_mut(ei);
                    for (j, v) in data[start..start + window_len].iter().enumerate() {
                        dst[j] = *v as f64;
                    }
                }
            }
            out.push(t);
        }
        Ok(out)
    }

    /// Simulate an electrode failure: drop the payload and flag the channel
    /// as missing for that day.
    pub fn mark_missing(&mut self, p: ParticipantId, d: DayId, e: ElectrodeId) {
        self.participants[p.0].days[d.0].channels[e.0] = None;
    }

    /// Persist to `root` in the manifest + payload directory layout.
    pub fn save_dataset(&self, root: &Path, geometry: &ElectrodeGeometry) -> Result<(), RaggedError> {
        let data_dir = root.join("data");
        fs::create_dir_all(&data_dir)?;
        let mut manifest = Manifest {
            participants: Vec::new(),
        };
        for (pi, pr) in self.participants.iter().enumerate() {
            let mut days = Vec::new();
            for (di, day) in pr.days.iter().enumerate() {
                let mut missing = Vec::new();
                for (ei, ch) in day.channels.iter().enumerate() {
                    match ch {
                        Some(data) => {
                            let mut bytes = Vec::with_capacity(data.len() * 4);
                            for v in data {
                                bytes.extend_from_slice(&v.to_le_bytes());
                            }
                            fs::write(data_dir.join(format!("p{pi}_d{di}_e{ei}.f32")), bytes)?;
                        }
                        None => missing.push(ei),
                    }
                }
                days.push(ManifestDay {
                    id: di,
                    samples: day.samples,
                    rate_hz: day.rate_hz,
                    missing,
                });
            }
            manifest.participants.push(ManifestParticipant {
                id: pi,
                electrode_count: pr.electrode_count,
                geometry: geometry.positions[pi].clone(),
                days,
            });
        }
        fs::write(
            root.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

/// Load and validate a dataset directory written by
/// [`RaggedRecording::save_dataset`].
pub fn load_dataset(root: &Path) -> Result<(RaggedRecording, ElectrodeGeometry), RaggedError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(root.join("manifest.json"))?)?;
    let mut participants = Vec::new();
    let mut geometry = ElectrodeGeometry::default();
    for (pi, mp) in manifest.participants.iter().enumerate() {
        if mp.id != pi {
            return Err(RaggedError::Manifest(format!(
                "participant ids must be 0..n in order, found {} at position {pi}",
                mp.id
            )));
        }
        if mp.geometry.len() != mp.electrode_count {
            return Err(RaggedError::Manifest(format!(
                "p{pi}: {} geometry rows for {} electrodes",
                mp.geometry.len(),
                mp.electrode_count
            )));
        }
        if mp.geometry.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RaggedError::Manifest(format!("p{pi}: non-finite electrode position")));
        }
        let p = ParticipantId(pi);
        let mut days = Vec::new();
        for (di, md) in mp.days.iter().enumerate() {
            if md.id != di {
                return Err(RaggedError::Manifest(format!(
                    "{p}: day ids must be 0..n in order, found {} at position {di}",
                    md.id
                )));
            }
            let day = DayId(di);
            if let Some(&bad) = md.missing.iter().find(|&&e| e >= mp.electrode_count) {
                return Err(RaggedError::Manifest(format!(
                    "{p}/{day}: missing electrode {bad} out of range"
                )));
            }
            let mut channels: Vec<Option<Vec<f32>>> = Vec::with_capacity(mp.electrode_count);
            for ei in 0..mp.electrode_count {
                if md.missing.contains(&ei) {
                    channels.push(None);
                    continue;
                }
                let e = ElectrodeId(ei);
                let path = root.join("data").join(format!("p{pi}_d{di}_e{ei}.f32"));
                let bytes = fs::read(&path).map_err(|err| {
                    RaggedError::Manifest(format!("{p}/{day}/{e}: cannot read {}: {err}", path.display()))
                })?;
                if bytes.len() != md.samples * 4 {
                    return Err(RaggedError::LengthMismatch {
                        participant: p,
                        day,
                        electrode: e,
                        expected: md.samples,
                        actual: bytes.len() / 4,
                    });
                }
                let data: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                if let Some(ix) = data.iter().position(|v| !v.is_finite()) {
                    return Err(RaggedError::NonFiniteSample {
                        participant: p,
                        day,
                        electrode: e,
                        index: ix,
                    });
                }
                channels.push(Some(data));
            }
            days.push(DayRecord {
                rate_hz: md.rate_hz,
                samples: md.samples,
                channels,
            });
        }
        participants.push(ParticipantRecord {
            electrode_count: mp.electrode_count,
            days,
        });
        geometry.positions.push(mp.geometry.clone());
    }
    Ok((RaggedRecording { participants }, geometry))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (RaggedRecording, ElectrodeGeometry) {
        // 2 participants, 2 days, 4 electrodes, 12 samples per day.
        let mk_day = |seed: f32| {
            let channels: Vec<Option<Vec<f32>>> = (0..4)
                .map(|e| Some((0..12).map(|t| seed + e as f32 + t as f32 * 0.25).collect()))
                .collect();
            (500.0, channels)
        };
        let rec = RaggedRecording::from_parts(vec![
            (4, vec![mk_day(0.0), mk_day(1.0)]),
            (4, vec![mk_day(2.0), mk_day(3.0)]),
        ])
        .unwrap();
        let geometry = ElectrodeGeometry {
            positions: vec![
                (0..4).map(|e| [e as f64, 0.0, 0.0]).collect(),
                (0..4).map(|e| [0.0, e as f64, 0.0]).collect(),
            ],
        };
        (rec, geometry)
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let (mut rec, geometry) = fixture();
        rec.mark_missing(ParticipantId(0), DayId(1), ElectrodeId(3));
        let dir = tempfile::tempdir().unwrap();
        rec.save_dataset(dir.path(), &geometry).unwrap();
        let (loaded, geo2) = load_dataset(dir.path()).unwrap();

        assert_eq!(loaded.participant_count(), 2);
        assert_eq!(loaded.electrode_count(ParticipantId(0)), 4);
        for p in rec.participants() {
            for d in 0..rec.day_count(p) {
                let day_a = rec.day(p, DayId(d)).unwrap();
                let day_b = loaded.day(p, DayId(d)).unwrap();
                for e in 0..4 {
                    assert_eq!(day_a.channel(ElectrodeId(e)), day_b.channel(ElectrodeId(e)));
                }
            }
        }
        assert_eq!(geometry.positions, geo2.positions);
        // flag propagation
        let avail = loaded.availability(ParticipantId(0), DayId(1)).unwrap();
        assert_eq!(avail.missing, vec![ElectrodeId(3)]);
        assert_eq!(
            avail.observed,
            vec![ElectrodeId(0), ElectrodeId(1), ElectrodeId(2)]
        );
    }

    #[test]
    fn truncated_payload_names_the_channel() {
        let (rec, geometry) = fixture();
        let dir = tempfile::tempdir().unwrap();
        rec.save_dataset(dir.path(), &geometry).unwrap();
        let victim = dir.path().join("data").join("p0_d1_e2.f32");
        let mut bytes = fs::read(&victim).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&victim, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(RaggedError::LengthMismatch {
                participant,
                day,
                electrode,
                expected,
                actual,
            }) => {
                assert_eq!(participant, ParticipantId(0));
                assert_eq!(day, DayId(1));
                assert_eq!(electrode, ElectrodeId(2));
                assert_eq!(expected, 12);
                assert_eq!(actual, 11);
            }
            other => panic!("expected LengthMismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let (rec, geometry) = fixture();
        let dir = tempfile::tempdir().unwrap();
        rec.save_dataset(dir.path(), &geometry).unwrap();
        let victim = dir.path().join("data").join("p1_d0_e0.f32");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&victim, bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(RaggedError::NonFiniteSample { index: 1, .. })
        ));
    }

    #[test]
    fn availability_partitions_the_electrode_set() {
        let (mut rec, _) = fixture();
        let p = ParticipantId(0);
        // no missing electrodes
        let full = rec.availability(p, DayId(0)).unwrap();
        assert!(full.missing.is_empty());
        assert_eq!(full.observed.len(), 4);

        rec.mark_missing(p, DayId(0), ElectrodeId(1));
        rec.mark_missing(p, DayId(0), ElectrodeId(2));
        let sets = rec.availability(p, DayId(0)).unwrap();
        assert_eq!(sets.observed, vec![ElectrodeId(0), ElectrodeId(3)]);
        assert_eq!(sets.missing, vec![ElectrodeId(1), ElectrodeId(2)]);
        assert_eq!(sets.observed.len() + sets.missing.len(), 4);

        for e in 0..4 {
            rec.mark_missing(p, DayId(1), ElectrodeId(e));
        }
        assert!(rec.availability(p, DayId(1)).unwrap().is_degenerate());

        assert!(matches!(
            rec.availability(ParticipantId(9), DayId(0)),
            Err(RaggedError::UnknownParticipant(_))
        ));
        assert!(matches!(
            rec.availability(p, DayId(7)),
            Err(RaggedError::UnknownDay { .. })
        ));
    }

    #[test]
    fn slice_counts_follow_floor_rule() {
        let mk = |len: usize| {
            let channels: Vec<Option<Vec<f32>>> =
                (0..2).map(|_| Some(vec![1.0f32; len])).collect();
            RaggedRecording::from_parts(vec![(2, vec![(500.0, channels)])]).unwrap()
        };
        let p = ParticipantId(0);
        assert_eq!(mk(1200).slice_instances(p, DayId(0), 400, 400).unwrap().len(), 3);
        assert_eq!(mk(1000).slice_instances(p, DayId(0), 400, 400).unwrap().len(), 2);
        assert!(mk(300).slice_instances(p, DayId(0), 400, 400).unwrap().is_empty());
    }

    #[test]
    fn missing_rows_slice_to_zeros() {
        let channels = vec![Some(vec![2.0f32; 100]), None];
        let rec = RaggedRecording::from_parts(vec![(2, vec![(500.0, channels)])]).unwrap();
        let inst = rec
            .slice_instances(ParticipantId(0), DayId(0), 50, 50)
            .unwrap();
        assert_eq!(inst.len(), 2);
        assert!(inst[0].row(0).iter().all(|&v| v == 2.0));
        assert!(inst[0].row(1).iter().all(|&v| v == 0.0));
    }
}
