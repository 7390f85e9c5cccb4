use std::path::Path;

use crate::lrp::RelevanceReport;
use crate::nn::ParameterVector;
use crate::pruning::{Component, PruningError};
use crate::scalar::Scalar;
use crate::wire::{fnv1a64, pack_bits, unpack_bits, Reader, WireError};

pub const MASK_MAGIC: [u8; 4] = *b"FPMK";
pub const MASK_VERSION: u16 = 1;

/// Per-parameter keep/drop mask built from pruned components.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningMask {
    keep: Vec<bool>,
    pruned_component_ids: Vec<usize>,
    rate_requested: f32,
    created_at_round: u32,
}

impl PruningMask {
    /// Mask that keeps every parameter.
    pub fn keep_all(len: usize) -> Self {
        Self {
            keep: vec![true; len],
            pruned_component_ids: Vec::new(),
            rate_requested: 0.0,
            created_at_round: 0,
        }
    }

    /// Mask with the given components' parameter ranges cleared.
    pub fn from_components(
        total_params: usize,
        components: &[Component],
        pruned_ids: &[usize],
        rate_requested: f32,
        created_at_round: u32,
    ) -> Result<Self, PruningError> {
        let mut keep = vec![true; total_params];
        let mut ids = pruned_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        for &id in &ids {
            let comp = components
                .get(id)
                .filter(|c| c.id == id)
                .ok_or_else(|| PruningError::Mismatch(format!("unknown component id {id}")))?;
            if comp.parameter_range.end > total_params {
                return Err(PruningError::Mismatch(format!(
                    "component {id} range {:?} exceeds {total_params} parameters",
                    comp.parameter_range
                )));
            }
            keep[comp.parameter_range.clone()].fill(false);
        }
        Ok(Self {
            keep,
            pruned_component_ids: ids,
            rate_requested,
            created_at_round,
        })
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn pruned_component_ids(&self) -> &[usize] {
        &self.pruned_component_ids
    }

    pub fn rate_requested(&self) -> f32 {
        self.rate_requested
    }

    pub fn created_at_round(&self) -> u32 {
        self.created_at_round
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.len() - self.kept_count()
    }

    pub fn pruned_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            0.0
        } else {
            self.pruned_count() as f64 / self.len() as f64
        }
    }

    /// LSB-first bitmap, 1 = keep.
    pub fn bitmap(&self) -> Vec<u8> {
        pack_bits(self.keep.iter().copied())
    }

    /// FNV-1a over the bitmap.
    pub fn digest(&self) -> u64 {
        fnv1a64(&self.bitmap())
    }

    /// Bytes of the mask message sent to each client when the mask is
    /// first distributed: created-at round u32, bit count u32, digest u64,
    /// then the bitmap.
    pub fn encode_message(&self) -> Vec<u8> {
        let bitmap = self.bitmap();
        let mut out = Vec::with_capacity(16 + bitmap.len());
        out.extend_from_slice(&self.created_at_round.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&fnv1a64(&bitmap).to_le_bytes());
        out.extend_from_slice(&bitmap);
        out
    }

    /// Serialized `FPMK` mask file.
    pub fn encode_file(&self) -> Vec<u8> {
        let bitmap = self.bitmap();
        let mut out = Vec::with_capacity(30 + bitmap.len());
        out.extend_from_slice(&MASK_MAGIC);
        out.extend_from_slice(&MASK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.rate_requested.to_le_bytes());
        out.extend_from_slice(&self.created_at_round.to_le_bytes());
        out.extend_from_slice(&bitmap);
        out.extend_from_slice(&fnv1a64(&bitmap).to_le_bytes());
        out
    }

    /// Parses an `FPMK` file. The file does not carry component ids, so
    /// `pruned_component_ids` of the result is empty unless `components`
    /// are supplied to recover them.
    pub fn decode_file(bytes: &[u8], components: Option<&[Component]>) -> Result<Self, PruningError> {
        let mut r = Reader::new(bytes);
        r.magic(MASK_MAGIC)?;
        let version = r.u16()?;
        if version != MASK_VERSION {
            return Err(WireError::Version(version).into());
        }
        let n = usize::try_from(r.u64()?)
            .map_err(|_| WireError::Malformed("mask length overflows usize".into()))?;
        let rate_requested = r.f32()?;
        let created_at_round = r.u32()?;
        let bitmap = r.take(n.div_ceil(8))?;
        let digest = r.u64()?;
        r.finish()?;
        let actual = fnv1a64(bitmap);
        if actual != digest {
            return Err(PruningError::DigestMismatch {
                expected: digest,
                actual,
            });
        }
        let keep = unpack_bits(bitmap, n);
        let pruned_component_ids = components
            .map(|cs| {
                cs.iter()
                    .filter(|c| c.parameter_range.end <= n && c.parameter_range.clone().all(|i| !keep[i]))
                    .map(|c| c.id)
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self {
            keep,
            pruned_component_ids,
            rate_requested,
            created_at_round,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PruningError> {
        std::fs::write(path, self.encode_file()).map_err(|source| PruningError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path, components: Option<&[Component]>) -> Result<Self, PruningError> {
        let bytes = std::fs::read(path).map_err(|source| PruningError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode_file(&bytes, components)
    }
}

fn check_rate(q: f64) -> Result<(), PruningError> {
    if !(0.0..1.0).contains(&q) {
        return Err(PruningError::RateOutOfRange(q));
    }
    Ok(())
}

/// Ranking of components by ascending mean relevance, ties by lower id.
pub fn relevance_order(report: &RelevanceReport) -> Vec<usize> {
    let mut order: Vec<usize> = (0..report.components.len()).collect();
    order.sort_by(|&a, &b| {
        report.mean_relevance[a]
            .total_cmp(&report.mean_relevance[b])
            .then(report.components[a].id.cmp(&report.components[b].id))
    });
    order.into_iter().map(|k| report.components[k].id).collect()
}

/// Greedy budgeted selection over a ranking of component ids.
///
/// Walks `order` and prunes components while the cumulative pruned
/// parameter count stays within `q * total_params`. A component that would
/// remove the last surviving channel of its layer is passed over; the walk
/// stops at the first eligible component that does not fit the budget.
pub fn build_mask_from_order(
    order: &[usize],
    components: &[Component],
    q: f64,
    total_params: usize,
    created_at_round: u32,
) -> Result<PruningMask, PruningError> {
    check_rate(q)?;
    if order.len() != components.len() {
        return Err(PruningError::Mismatch(format!(
            "ranking covers {} components, expected {}",
            order.len(),
            components.len()
        )));
    }
    let mut seen = vec![false; components.len()];
    for &id in order {
        if id >= components.len() || components[id].id != id || std::mem::replace(&mut seen[id], true) {
            return Err(PruningError::Mismatch(format!("ranking has invalid or repeated id {id}")));
        }
    }
    let budget = q * total_params as f64;
    let mut remaining_per_layer = std::collections::BTreeMap::<usize, usize>::new();
    for c in components {
        *remaining_per_layer.entry(c.layer_index).or_default() += 1;
    }
    let mut pruned = Vec::new();
    let mut used = 0usize;
    for &id in order {
        let comp = &components[id];
        let remaining = remaining_per_layer.get_mut(&comp.layer_index).expect("layer counted");
        if *remaining <= 1 {
            continue;
        }
        if (used + comp.parameter_count()) as f64 > budget {
            break;
        }
        used += comp.parameter_count();
        *remaining -= 1;
        pruned.push(id);
    }
    PruningMask::from_components(total_params, components, &pruned, q as f32, created_at_round)
}

/// Mask pruning the least relevant components within the parameter budget.
pub fn build_mask(
    report: &RelevanceReport,
    components: &[Component],
    q: f64,
    total_params: usize,
    created_at_round: u32,
) -> Result<PruningMask, PruningError> {
    check_rate(q)?;
    if report.components != components || report.mean_relevance.len() != components.len() {
        return Err(PruningError::Mismatch(
            "relevance report does not cover the given components".into(),
        ));
    }
    if let Some(k) = report.mean_relevance.iter().position(|r| !r.is_finite()) {
        return Err(PruningError::Mismatch(format!("component {k} has non-finite relevance")));
    }
    build_mask_from_order(&relevance_order(report), components, q, total_params, created_at_round)
}

/// Elementwise product with the mask; dropped coordinates become `+0.0`.
pub fn apply_mask<T: Scalar>(
    params: &ParameterVector<T>,
    mask: &PruningMask,
) -> Result<ParameterVector<T>, PruningError> {
    let mut out = params.clone();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place<T: Scalar>(
    params: &mut ParameterVector<T>,
    mask: &PruningMask,
) -> Result<(), PruningError> {
    if params.len() != mask.len() {
        return Err(PruningError::LengthMismatch {
            expected: mask.len(),
            got: params.len(),
        });
    }
    for (v, &k) in params.values_mut().iter_mut().zip(mask.keep()) {
        if !k {
            *v = T::zero();
        }
    }
    Ok(())
}
