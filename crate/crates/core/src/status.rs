//! Status codes of the three-status-bit and two-status-bit layouts.
//!
//! Three-bit codes are written `occupied continuation shifted`:
//!
//! | code  | meaning                                   |
//! |-------|-------------------------------------------|
//! | `000` | empty slot                                |
//! | `100` | cluster start                             |
//! | `*01` | run start (shifted)                       |
//! | `*11` | continuation of a run                     |
//! | `010` | read lock on a cluster start (`100`)      |
//! | `110` | write lock; with a nonzero remainder it is a migration lock |
//!
//! The leading `*` is the occupied bit, which belongs to the slot position
//! rather than to the remainder stored there.

/// The slot's quotient has a run.
pub const OCCUPIED: u64 = 0b100;
/// The remainder continues the run of the previous slot.
pub const CONTINUATION: u64 = 0b010;
/// The remainder is not in its canonical slot.
pub const SHIFTED: u64 = 0b001;

pub const EMPTY: u64 = 0b000;
pub const CLUSTER_START: u64 = 0b100;
pub const READ_LOCK: u64 = 0b010;
pub const WRITE_LOCK: u64 = 0b110;

/// Remainder stored together with [`WRITE_LOCK`] to mark a migration lock.
pub const MIGRATION_LOCK_REMAINDER: u64 = 1;

/// Two-bit layout: occupied bit.
pub const TWO_BIT_OCCUPIED: u64 = 0b10;
/// Two-bit layout: the remainder starts a new run.
pub const TWO_BIT_NEW_RUN: u64 = 0b01;

/// Decoded meaning of a three-bit slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Empty,
    /// Held by an insert for the supercluster to its left.
    WriteLocked,
    /// Sealed by a migration; never released.
    MigrationLocked,
    /// A cluster start currently locked by a query or insert.
    ReadLocked { remainder: u64 },
    Data {
        occupied: bool,
        continuation: bool,
        shifted: bool,
        remainder: u64,
    },
}

impl SlotState {
    pub fn classify(status: u64, remainder: u64) -> Self {
        match status {
            EMPTY => SlotState::Empty,
            READ_LOCK => SlotState::ReadLocked { remainder },
            WRITE_LOCK if remainder == 0 => SlotState::WriteLocked,
            WRITE_LOCK => SlotState::MigrationLocked,
            s => SlotState::Data {
                occupied: s & OCCUPIED != 0,
                continuation: s & CONTINUATION != 0,
                shifted: s & SHIFTED != 0,
                remainder,
            },
        }
    }

    pub fn is_lock(&self) -> bool {
        matches!(
            self,
            SlotState::WriteLocked | SlotState::MigrationLocked | SlotState::ReadLocked { .. }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_follows_table() {
        assert_eq!(SlotState::classify(0b000, 0), SlotState::Empty);
        assert_eq!(SlotState::classify(0b110, 0), SlotState::WriteLocked);
        assert_eq!(SlotState::classify(0b110, 1), SlotState::MigrationLocked);
        assert_eq!(SlotState::classify(0b010, 9), SlotState::ReadLocked { remainder: 9 });
        assert_eq!(
            SlotState::classify(0b100, 3),
            SlotState::Data { occupied: true, continuation: false, shifted: false, remainder: 3 }
        );
        assert_eq!(
            SlotState::classify(0b011, 3),
            SlotState::Data { occupied: false, continuation: true, shifted: true, remainder: 3 }
        );
        assert!(SlotState::classify(0b010, 0).is_lock());
        assert!(!SlotState::classify(0b101, 0).is_lock());
    }
}
