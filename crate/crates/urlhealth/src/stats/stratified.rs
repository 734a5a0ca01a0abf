//! Stratified audit sampling with largest-remainder allocation.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{group_key, StatsError};
use crate::classify::Verdict;
use crate::extract::UrlRecord;

/// How many audit slots one stratum of one group received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditAllocation {
    pub group: BTreeMap<String, String>,
    pub stratum: String,
    pub population: u64,
    pub allocated: u64,
}

/// A drawn audit sample: indices into the input slice, in deterministic
/// order (groups sorted, strata sorted, indices ascending).
#[derive(Debug, Clone, Default, Serialize)]
pub struct StratifiedSample {
    pub indices: Vec<usize>,
    pub allocations: Vec<AuditAllocation>,
    /// Groups whose whole population was smaller than `per_group`.
    pub short_groups: Vec<BTreeMap<String, String>>,
}

/// Stratum assignment used for auditing UNKNOWN verdicts: the statuses that
/// dominate them, with everything else pooled.
pub fn unknown_status_stratum(verdict: &Verdict) -> String {
    match (verdict.basis.status, verdict.basis.error_kind) {
        (Some(403), _) => "403".to_string(),
        (Some(429), _) => "429".to_string(),
        (None, Some(_)) => "connection_error".to_string(),
        _ => "other".to_string(),
    }
}

/// Proportional largest-remainder allocation of `quota` slots over strata
/// populations, capped by stratum size, deficits redistributed by the same
/// rule over the strata that still have room.
///
/// Remainder ties break by larger population, then stratum name.
fn allocate(strata: &[(String, u64)], quota: u64) -> Vec<u64> {
    let mut alloc = vec![0u64; strata.len()];
    let mut remaining = quota.min(strata.iter().map(|(_, p)| p).sum());
    while remaining > 0 {
        let open: Vec<usize> = (0..strata.len())
            .filter(|&i| alloc[i] < strata[i].1)
            .collect();
        if open.is_empty() {
            break;
        }
        let pool: u64 = open.iter().map(|&i| strata[i].1).sum();
        let mut shares: Vec<(usize, u64, u64)> = open
            .iter()
            .map(|&i| {
                let numerator = remaining as u128 * strata[i].1 as u128;
                let base = (numerator / pool as u128) as u64;
                let remainder = (numerator % pool as u128) as u64;
                (i, base, remainder)
            })
            .collect();
        let mut seats = remaining - shares.iter().map(|(_, b, _)| b).sum::<u64>();
        shares.sort_by(|a, b| {
            b.2.cmp(&a.2)
                .then(strata[b.0].1.cmp(&strata[a.0].1))
                .then(strata[a.0].0.cmp(&strata[b.0].0))
        });
        for share in shares.iter_mut() {
            if seats == 0 {
                break;
            }
            share.1 += 1;
            seats -= 1;
        }
        let mut granted = 0u64;
        for (i, want, _) in shares {
            let room = strata[i].1 - alloc[i];
            let take = want.min(room);
            alloc[i] += take;
            granted += take;
        }
        if granted == 0 {
            break;
        }
        remaining -= granted;
    }
    alloc
}

fn stratum_rng(seed: u64, group: &BTreeMap<String, String>, stratum: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for (key, value) in group {
        hasher.update([0x1f]);
        hasher.update(key.as_bytes());
        hasher.update([0x1e]);
        hasher.update(value.as_bytes());
    }
    hasher.update([0x1d]);
    hasher.update(stratum.as_bytes());
    let digest = hasher.finalize();
    let bytes: [u8; 32] = digest.as_slice().try_into().expect("sha256 is 32 bytes");
    ChaCha8Rng::from_seed(bytes)
}

/// Draw `count` members without replacement, returned in ascending order.
fn draw(members: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = members.to_vec();
    let count = count.min(pool.len());
    for slot in 0..count {
        let pick = slot + rng.random_range(0..pool.len() - slot);
        pool.swap(slot, pick);
    }
    let mut chosen = pool[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Stratified sample of up to `per_group` items from every group.
///
/// Slots are spread over strata proportionally (largest remainder); groups
/// smaller than `per_group` are taken whole and flagged. The same seed
/// always draws the same sample.
pub fn stratified_sample(
    items: &[(UrlRecord, Verdict)],
    group_by: &[String],
    stratum_of: &dyn Fn(&UrlRecord, &Verdict) -> String,
    per_group: usize,
    seed: u64,
) -> Result<StratifiedSample, StatsError> {
    if per_group == 0 {
        return Err(StatsError::InvalidArguments(
            "per_group must be at least 1".to_string(),
        ));
    }
    let mut groups: BTreeMap<BTreeMap<String, String>, BTreeMap<String, Vec<usize>>> =
        BTreeMap::new();
    for (index, (record, verdict)) in items.iter().enumerate() {
        let key = group_key(&record.group_labels, group_by);
        groups
            .entry(key)
            .or_default()
            .entry(stratum_of(record, verdict))
            .or_default()
            .push(index);
    }

    let mut sample = StratifiedSample::default();
    for (group, strata) in &groups {
        let population: u64 = strata.values().map(|m| m.len() as u64).sum();
        let strata_sizes: Vec<(String, u64)> = strata
            .iter()
            .map(|(name, members)| (name.clone(), members.len() as u64))
            .collect();
        let allocation = if population <= per_group as u64 {
            if population < per_group as u64 {
                sample.short_groups.push(group.clone());
            }
            strata_sizes.iter().map(|(_, p)| *p).collect::<Vec<u64>>()
        } else {
            allocate(&strata_sizes, per_group as u64)
        };
        for ((stratum, members), allocated) in strata.iter().zip(&allocation) {
            let mut rng = stratum_rng(seed, group, stratum);
            sample
                .indices
                .extend(draw(members, *allocated as usize, &mut rng));
            sample.allocations.push(AuditAllocation {
                group: group.clone(),
                stratum: stratum.clone(),
                population: members.len() as u64,
                allocated: *allocated,
            });
        }
    }
    Ok(sample)
}
