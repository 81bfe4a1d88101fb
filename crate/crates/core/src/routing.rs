//! Key-to-shard routing.
//!
//! Keys hash onto 16384 slots with CRC-16/XMODEM. A key containing a
//! non-empty `{tag}` hashes only the tag, which lets callers force
//! related keys onto the same shard. Each shard owns one contiguous,
//! inclusive slot range.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of hash slots in a cluster.
pub const SLOT_COUNT: u16 = 16384;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("empty key")]
    EmptyKey,
    #[error("slot {0} is outside 0..16384")]
    SlotOutOfRange(u32),
    #[error("shard count {n_shards} must be >= 1 and match {n_addresses} addresses")]
    BadCount { n_shards: usize, n_addresses: usize },
    #[error("invalid topology: {0}")]
    BadTopology(String),
}

const fn crc16_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

pub(crate) static CRC16_TABLE: [u16; 256] = crc16_table();

/// CRC-16/XMODEM: poly 0x1021, init 0, no reflection, no final xor.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0u16, |crc, &b| {
        (crc << 8) ^ CRC16_TABLE[(((crc >> 8) as u8) ^ b) as usize]
    })
}

/// A hash slot in `0..16384`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct SlotId(u16);

impl SlotId {
    pub const MAX: SlotId = SlotId(SLOT_COUNT - 1);

    pub fn new(value: u32) -> Result<Self, RoutingError> {
        if value < SLOT_COUNT as u32 {
            Ok(SlotId(value as u16))
        } else {
            Err(RoutingError::SlotOutOfRange(value))
        }
    }

    pub fn get(self) -> u16 {
        self.0
    }
}

impl TryFrom<u16> for SlotId {
    type Error = RoutingError;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        SlotId::new(v as u32)
    }
}

impl From<SlotId> for u16 {
    fn from(s: SlotId) -> u16 {
        s.0
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// The bytes of `key` that participate in hashing.
pub fn hash_tag(key: &str) -> &str {
    if let Some(open) = key.find('{') {
        if let Some(len) = key[open + 1..].find('}') {
            if len > 0 {
                return &key[open + 1..open + 1 + len];
            }
        }
    }
    key
}

pub fn key_slot(key: &str) -> Result<SlotId, RoutingError> {
    if key.is_empty() {
        return Err(RoutingError::EmptyKey);
    }
    Ok(SlotId(crc16(hash_tag(key).as_bytes()) % SLOT_COUNT))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub id: u32,
    pub address: String,
    /// Inclusive `[lo, hi]`.
    pub slots: (SlotId, SlotId),
}

impl ShardInfo {
    pub fn owns(&self, slot: SlotId) -> bool {
        self.slots.0 <= slot && slot <= self.slots.1
    }

    pub fn slot_count(&self) -> usize {
        (self.slots.1.get() - self.slots.0.get()) as usize + 1
    }
}

/// Shard addresses and their slot ranges.
///
/// Ranges are disjoint and cover every slot; shards are kept sorted by
/// their lower bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDoc", into = "TopologyDoc")]
pub struct ClusterTopology {
    shards: Vec<ShardInfo>,
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    shards: Vec<ShardInfo>,
}

impl TryFrom<TopologyDoc> for ClusterTopology {
    type Error = RoutingError;

    fn try_from(doc: TopologyDoc) -> Result<Self, Self::Error> {
        ClusterTopology::new(doc.shards)
    }
}

impl From<ClusterTopology> for TopologyDoc {
    fn from(t: ClusterTopology) -> Self {
        TopologyDoc { shards: t.shards }
    }
}

impl ClusterTopology {
    pub fn new(mut shards: Vec<ShardInfo>) -> Result<Self, RoutingError> {
        if shards.is_empty() {
            return Err(RoutingError::BadTopology("no shards".into()));
        }
        shards.sort_by_key(|s| s.slots.0);
        let mut next: u32 = 0;
        for s in &shards {
            if s.slots.0 > s.slots.1 {
                return Err(RoutingError::BadTopology(format!("shard {} has an inverted range", s.id)));
            }
            if s.slots.0.get() as u32 != next {
                return Err(RoutingError::BadTopology(format!(
                    "slot {next} is not covered exactly once (shard {} starts at {})",
                    s.id, s.slots.0
                )));
            }
            next = s.slots.1.get() as u32 + 1;
        }
        if next != SLOT_COUNT as u32 {
            return Err(RoutingError::BadTopology(format!("slots {next}..16383 are not covered")));
        }
        let mut ids: Vec<u32> = shards.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != shards.len() {
            return Err(RoutingError::BadTopology("duplicate shard ids".into()));
        }
        Ok(ClusterTopology { shards })
    }

    pub fn shards(&self) -> &[ShardInfo] {
        &self.shards
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn shard(&self, id: u32) -> Option<&ShardInfo> {
        self.shards.iter().find(|s| s.id == id)
    }

    /// Position in [`ClusterTopology::shards`] of the shard owning `slot`.
    pub fn owner_index(&self, slot: SlotId) -> usize {
        // Ranges are sorted and contiguous, so the owner is the last shard
        // whose lower bound is <= slot.
        self.shards.partition_point(|s| s.slots.0 <= slot) - 1
    }

    pub fn slot_owner(&self, slot: SlotId) -> u32 {
        self.shards[self.owner_index(slot)].id
    }

    pub fn key_owner(&self, key: &str) -> Result<&ShardInfo, RoutingError> {
        Ok(&self.shards[self.owner_index(key_slot(key)?)])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RoutingError> {
        serde_json::from_str(s).map_err(|e| RoutingError::BadTopology(e.to_string()))
    }
}

pub fn slot_owner(topo: &ClusterTopology, slot: SlotId) -> u32 {
    topo.slot_owner(slot)
}

/// Splits the slot space into `n_shards` contiguous near-equal ranges.
/// The first `16384 % n` shards receive one extra slot.
pub fn plan_topology<S: AsRef<str>>(
    n_shards: usize,
    addresses: &[S],
) -> Result<ClusterTopology, RoutingError> {
    if n_shards == 0 || n_shards != addresses.len() || n_shards > SLOT_COUNT as usize {
        return Err(RoutingError::BadCount { n_shards, n_addresses: addresses.len() });
    }
    let base = SLOT_COUNT as usize / n_shards;
    let extra = SLOT_COUNT as usize % n_shards;
    let mut lo = 0usize;
    let shards = addresses
        .iter()
        .enumerate()
        .map(|(i, addr)| {
            let size = base + usize::from(i < extra);
            let hi = lo + size - 1;
            let info = ShardInfo {
                id: i as u32,
                address: addr.as_ref().to_string(),
                slots: (SlotId(lo as u16), SlotId(hi as u16)),
            };
            lo = hi + 1;
            info
        })
        .collect();
    ClusterTopology::new(shards)
}

/// The shortest `s<n>` hash tag landing on `slot`, without caching.
fn search_tag(slot: u16) -> String {
    let mut buf = [0u8; 24];
    buf[0] = b's';
    for n in 0u64.. {
        // Decimal digits of n, written after the 's'.
        let mut digits = [0u8; 20];
        let mut len = 0;
        let mut v = n;
        loop {
            digits[len] = b'0' + (v % 10) as u8;
            len += 1;
            v /= 10;
            if v == 0 {
                break;
            }
        }
        for i in 0..len {
            buf[1 + i] = digits[len - 1 - i];
        }
        let cand = &buf[..=len];
        if crc16(cand) % SLOT_COUNT == slot {
            return String::from_utf8(cand.to_vec()).expect("ascii");
        }
    }
    unreachable!("every slot is reachable")
}

/// A short hash tag whose slot is exactly `slot`. Results are cached for
/// the life of the process.
pub fn tag_for_slot(slot: SlotId) -> String {
    static CACHE: OnceLock<Mutex<HashMap<u16, String>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(tag) = cache.lock().get(&slot.get()) {
        return tag.clone();
    }
    let tag = search_tag(slot.get());
    cache.lock().insert(slot.get(), tag.clone());
    tag
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-serial CRC-16/XMODEM, independent of the table.
    fn crc16_bitwise(data: &[u8]) -> u16 {
        let mut crc: u16 = 0;
        for &b in data {
            crc ^= (b as u16) << 8;
            for _ in 0..8 {
                crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            }
        }
        crc
    }

    #[test]
    fn crc_vectors() {
        assert_eq!(crc16(b""), 0x0000);
        assert_eq!(crc16(b"123456789"), 0x31C3);
        assert_eq!(crc16_bitwise(b"123456789"), 0x31C3);
        assert_eq!(key_slot("foo").unwrap().get(), crc16(b"foo") % 16384);
        // Widely published cluster slot for "foo".
        assert_eq!(key_slot("foo").unwrap().get(), 12182);
    }

    #[test]
    fn hash_tags() {
        assert_eq!(key_slot("{job1}.a").unwrap(), key_slot("{job1}.b").unwrap());
        assert_eq!(key_slot("x{}").unwrap().get(), crc16(b"x{}") % 16384);
        assert_eq!(hash_tag("a{b}c{d}"), "b");
        assert_eq!(hash_tag("a}b{"), "a}b{");
        assert_eq!(key_slot(""), Err(RoutingError::EmptyKey));
    }

    #[test]
    fn slot_bounds() {
        assert!(SlotId::new(16383).is_ok());
        assert_eq!(SlotId::new(16384), Err(RoutingError::SlotOutOfRange(16384)));
    }

    #[test]
    fn plans() {
        let one = plan_topology(1, &["a"]).unwrap();
        assert_eq!(one.shards()[0].slots, (SlotId(0), SlotId(16383)));
        let four = plan_topology(4, &["a", "b", "c", "d"]).unwrap();
        assert!(four.shards().iter().all(|s| s.slot_count() == 4096));
        let three = plan_topology(3, &["a", "b", "c"]).unwrap();
        let sizes: Vec<_> = three.shards().iter().map(ShardInfo::slot_count).collect();
        assert_eq!(sizes, vec![5462, 5461, 5461]);
        assert!(matches!(plan_topology(2, &["a"]), Err(RoutingError::BadCount { .. })));
        assert!(matches!(plan_topology::<&str>(0, &[]), Err(RoutingError::BadCount { .. })));
    }

    #[test]
    fn owners() {
        let one = plan_topology(1, &["a"]).unwrap();
        assert_eq!(slot_owner(&one, SlotId(9000)), 0);
        let four = plan_topology(4, &["a", "b", "c", "d"]).unwrap();
        assert_eq!(slot_owner(&four, SlotId(5000)), 1);
        assert_eq!(slot_owner(&four, SlotId(4095)), 0);
        assert_eq!(slot_owner(&four, SlotId(4096)), 1);
        assert_eq!(slot_owner(&four, SlotId::MAX), 3);
    }

    #[test]
    fn topology_validation() {
        let gap = vec![
            ShardInfo { id: 0, address: "a".into(), slots: (SlotId(0), SlotId(10)) },
            ShardInfo { id: 1, address: "b".into(), slots: (SlotId(12), SlotId(16383)) },
        ];
        assert!(ClusterTopology::new(gap).is_err());
        assert!(ClusterTopology::new(vec![]).is_err());
        let t = plan_topology(3, &["a:1", "b:2", "c:3"]).unwrap();
        assert_eq!(ClusterTopology::from_json(&t.to_json()).unwrap(), t);
        assert!(ClusterTopology::from_json(r#"{"shards":[{"id":0,"address":"a","slots":[0,5]}]}"#).is_err());
    }

    #[test]
    fn tag_search_hits_slot() {
        for slot in [0u16, 4096, 16383] {
            let tag = tag_for_slot(SlotId(slot));
            assert_eq!(key_slot(&format!("{{{tag}}}tmp.x")).unwrap().get(), slot);
        }
    }

    proptest! {
        #[test]
        fn table_matches_bitwise(data in prop::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(crc16(&data), crc16_bitwise(&data));
        }

        #[test]
        fn tagged_keys_colocate(tag in "[a-z0-9]{1,8}", a in "[a-z.]{0,8}", b in "[a-z.]{0,8}", n in 1usize..9) {
            let addrs: Vec<String> = (0..n).map(|i| format!("h:{i}")).collect();
            let topo = plan_topology(n, &addrs).unwrap();
            let ka = format!("{a}{{{tag}}}{b}");
            let kb = format!("{b}{{{tag}}}.other");
            prop_assert_eq!(topo.key_owner(&ka).unwrap().id, topo.key_owner(&kb).unwrap().id);
        }
    }
}
