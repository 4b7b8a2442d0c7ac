//! Two-world machine model.
//!
//! An [`AddressSpaceController`] carves secure RAM out of a flat 64-bit byte
//! address space and mediates every access by world. Addresses that no region
//! covers belong to the normal world. A [`WorldContext`] tracks which world is
//! executing and charges a fixed cost for every transition.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// The two execution worlds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WorldId {
    Secure,
    Normal,
}

impl WorldId {
    pub fn other(self) -> Self {
        match self {
            WorldId::Secure => WorldId::Normal,
            WorldId::Normal => WorldId::Secure,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Owner {
    SecureOnly,
    NormalOnly,
    Shared,
}

impl Owner {
    pub fn permits(self, world: WorldId) -> bool {
        match (self, world) {
            (_, WorldId::Secure) => true,
            (Owner::SecureOnly, WorldId::Normal) => false,
            (Owner::NormalOnly | Owner::Shared, WorldId::Normal) => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessMode {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u16);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Half-open byte range `[base, base + length)` with a fixed owner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryRegion {
    pub id: RegionId,
    pub base: u64,
    pub length: u64,
    pub owner: Owner,
}

impl MemoryRegion {
    /// Exclusive end address. Never overflows for a registered region.
    pub fn end(&self) -> u64 {
        self.base + self.length
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }

    pub fn intersects(&self, base: u64, end: u64) -> bool {
        base < self.end() && self.base < end
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TeeError {
    #[error("range [{base:#x}, +{length:#x}) overlaps secure region {existing}")]
    Overlap {
        base: u64,
        length: u64,
        existing: RegionId,
    },
    #[error("invalid range [{base:#x}, +{length:#x}): zero length or address overflow")]
    Range { base: u64, length: u64 },
    #[error("region table exhausted")]
    TooManyRegions,
    #[error("unknown region {0}")]
    UnknownRegion(RegionId),
    #[error("{world:?} world denied {mode:?} access to [{base:#x}, +{length:#x})")]
    AccessDenied {
        world: WorldId,
        mode: AccessMode,
        base: u64,
        length: u64,
    },
}

fn range_end(base: u64, length: u64) -> Result<u64, TeeError> {
    if length == 0 {
        return Err(TeeError::Range { base, length });
    }
    base.checked_add(length)
        .ok_or(TeeError::Range { base, length })
}

/// Region table plus access mediation.
///
/// Lookup precedence for an address covered by several regions is
/// `SecureOnly` over `Shared` over `NormalOnly`, so a secure carve-out can
/// never be weakened by a later shared mapping on top of it.
#[derive(Clone, Debug, Default)]
pub struct AddressSpaceController {
    regions: Vec<MemoryRegion>,
}

impl AddressSpaceController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    pub fn region(&self, id: RegionId) -> Option<&MemoryRegion> {
        self.regions.iter().find(|r| r.id == id)
    }

    fn next_id(&self) -> Result<RegionId, TeeError> {
        u16::try_from(self.regions.len())
            .map(RegionId)
            .map_err(|_| TeeError::TooManyRegions)
    }

    /// Registers a new `SecureOnly` region. Secure regions never overlap.
    pub fn carve_secure_region(&mut self, base: u64, length: u64) -> Result<RegionId, TeeError> {
        let end = range_end(base, length)?;
        if let Some(existing) = self
            .regions
            .iter()
            .find(|r| r.owner == Owner::SecureOnly && r.intersects(base, end))
        {
            return Err(TeeError::Overlap {
                base,
                length,
                existing: existing.id,
            });
        }
        self.push(base, length, Owner::SecureOnly)
    }

    /// Registers a `Shared` region (world-crossing buffers). It may not
    /// overlap a secure carve-out.
    pub fn map_shared_region(&mut self, base: u64, length: u64) -> Result<RegionId, TeeError> {
        let end = range_end(base, length)?;
        if let Some(existing) = self
            .regions
            .iter()
            .find(|r| r.owner == Owner::SecureOnly && r.intersects(base, end))
        {
            return Err(TeeError::Overlap {
                base,
                length,
                existing: existing.id,
            });
        }
        self.push(base, length, Owner::Shared)
    }

    fn push(&mut self, base: u64, length: u64, owner: Owner) -> Result<RegionId, TeeError> {
        let id = self.next_id()?;
        self.regions.push(MemoryRegion {
            id,
            base,
            length,
            owner,
        });
        Ok(id)
    }

    /// Effective owner of a single byte.
    pub fn owner_of(&self, addr: u64) -> Owner {
        let mut owner = Owner::NormalOnly;
        for r in self.regions.iter().filter(|r| r.contains(addr)) {
            match r.owner {
                Owner::SecureOnly => return Owner::SecureOnly,
                Owner::Shared => owner = Owner::Shared,
                Owner::NormalOnly => {}
            }
        }
        owner
    }

    /// Allows the access only if every byte of the range is accessible to
    /// `world`. Pure; the mode does not influence the decision in this model.
    pub fn check_access(
        &self,
        world: WorldId,
        base: u64,
        length: u64,
        _mode: AccessMode,
    ) -> Result<Decision, TeeError> {
        let end = range_end(base, length)?;
        if world == WorldId::Secure {
            return Ok(Decision::Allow);
        }
        let blocked = self
            .regions
            .iter()
            .any(|r| r.owner == Owner::SecureOnly && r.intersects(base, end));
        Ok(if blocked {
            Decision::Deny
        } else {
            Decision::Allow
        })
    }

    /// Like [`check_access`](Self::check_access) but turns `Deny` into an error.
    pub fn require_access(
        &self,
        world: WorldId,
        base: u64,
        length: u64,
        mode: AccessMode,
    ) -> Result<(), TeeError> {
        match self.check_access(world, base, length, mode)? {
            Decision::Allow => Ok(()),
            Decision::Deny => Err(TeeError::AccessDenied {
                world,
                mode,
                base,
                length,
            }),
        }
    }
}

/// Backing bytes for regions, with every read and write mediated by the
/// controller.
#[derive(Debug, Default)]
pub struct RegionMemory {
    cells: HashMap<RegionId, Vec<u8>>,
}

impl RegionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    fn resolve(
        &self,
        asc: &AddressSpaceController,
        region: RegionId,
        offset: u64,
        length: u64,
    ) -> Result<u64, TeeError> {
        let r = asc.region(region).ok_or(TeeError::UnknownRegion(region))?;
        let end = offset.checked_add(length).ok_or(TeeError::Range {
            base: offset,
            length,
        })?;
        if end > r.length {
            return Err(TeeError::Range {
                base: r.base + offset,
                length,
            });
        }
        Ok(r.base + offset)
    }

    pub fn write(
        &mut self,
        asc: &AddressSpaceController,
        world: WorldId,
        region: RegionId,
        offset: u64,
        data: &[u8],
    ) -> Result<(), TeeError> {
        if data.is_empty() {
            return Ok(());
        }
        let addr = self.resolve(asc, region, offset, data.len() as u64)?;
        asc.require_access(world, addr, data.len() as u64, AccessMode::Write)?;
        let len = asc.region(region).map(|r| r.length).unwrap_or(0) as usize;
        let cell = self.cells.entry(region).or_insert_with(|| vec![0; len]);
        let start = offset as usize;
        cell[start..start + data.len()].copy_from_slice(data);
        Ok(())
    }

    pub fn read(
        &self,
        asc: &AddressSpaceController,
        world: WorldId,
        region: RegionId,
        offset: u64,
        length: u64,
    ) -> Result<Vec<u8>, TeeError> {
        if length == 0 {
            return Ok(Vec::new());
        }
        let addr = self.resolve(asc, region, offset, length)?;
        asc.require_access(world, addr, length, AccessMode::Read)?;
        let start = offset as usize;
        Ok(match self.cells.get(&region) {
            Some(cell) => cell[start..start + length as usize].to_vec(),
            None => vec![0; length as usize],
        })
    }
}

/// Execution-world tracker with switch-cost accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldContext {
    current: WorldId,
    switch_count: u64,
    switch_cost_units: u64,
    cost_per_switch: u64,
}

impl WorldContext {
    pub const DEFAULT_COST_PER_SWITCH: u64 = 1;

    pub fn new(start: WorldId) -> Self {
        Self::with_cost(start, Self::DEFAULT_COST_PER_SWITCH)
    }

    pub fn with_cost(start: WorldId, cost_per_switch: u64) -> Self {
        Self {
            current: start,
            switch_count: 0,
            switch_cost_units: 0,
            cost_per_switch,
        }
    }

    pub fn current(&self) -> WorldId {
        self.current
    }

    pub fn switch_count(&self) -> u64 {
        self.switch_count
    }

    pub fn switch_cost_units(&self) -> u64 {
        self.switch_cost_units
    }

    pub fn cost_per_switch(&self) -> u64 {
        self.cost_per_switch
    }

    /// Moves execution to `target`. Switching to the current world is free.
    pub fn world_switch(&mut self, target: WorldId) {
        if target == self.current {
            return;
        }
        self.current = target;
        self.switch_count += 1;
        self.switch_cost_units += self.cost_per_switch;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_carve_succeeds_and_resolves_secure() {
        let mut asc = AddressSpaceController::new();
        let id = asc.carve_secure_region(0x1000, 0x1000).unwrap();
        assert_eq!(id, RegionId(0));
        assert_eq!(asc.region(id).unwrap().owner, Owner::SecureOnly);
        assert_eq!(asc.owner_of(0x1000), Owner::SecureOnly);
        assert_eq!(asc.owner_of(0x1FFF), Owner::SecureOnly);
        assert_eq!(asc.owner_of(0x2000), Owner::NormalOnly);
        assert_eq!(asc.owner_of(0x0FFF), Owner::NormalOnly);
    }

    #[test]
    fn overlapping_carves_rejected() {
        let mut asc = AddressSpaceController::new();
        asc.carve_secure_region(0x1000, 0x1000).unwrap();
        assert!(matches!(
            asc.carve_secure_region(0x1800, 0x100),
            Err(TeeError::Overlap { .. })
        ));
        // Brute-force intersection of [0x0F00,0x1100) with [0x1000,0x2000).
        let hit = (0x0F00u64..0x1100).any(|b| (0x1000..0x2000).contains(&b));
        assert!(hit);
        assert!(matches!(
            asc.carve_secure_region(0x0F00, 0x200),
            Err(TeeError::Overlap { .. })
        ));
        // Adjacent ranges do not overlap.
        assert!(asc.carve_secure_region(0x2000, 0x10).is_ok());
        assert!(asc.carve_secure_region(0x0F00, 0x100).is_ok());
    }

    #[test]
    fn range_errors() {
        let mut asc = AddressSpaceController::new();
        assert!(matches!(
            asc.carve_secure_region(0x10, 0),
            Err(TeeError::Range { .. })
        ));
        assert!(matches!(
            asc.carve_secure_region(u64::MAX, 2),
            Err(TeeError::Range { .. })
        ));
        assert!(matches!(
            asc.check_access(WorldId::Normal, u64::MAX - 1, 4, AccessMode::Read),
            Err(TeeError::Range { .. })
        ));
        // The last byte of the address space is reachable.
        assert!(asc.carve_secure_region(u64::MAX - 1, 1).is_ok());
    }

    #[test]
    fn access_mediation_examples() {
        let mut asc = AddressSpaceController::new();
        asc.carve_secure_region(0x1000, 0x1000).unwrap();
        let normal = asc
            .check_access(WorldId::Normal, 0x1800, 8, AccessMode::Read)
            .unwrap();
        assert_eq!(normal, Decision::Deny);
        let secure = asc
            .check_access(WorldId::Secure, 0x1800, 8, AccessMode::Write)
            .unwrap();
        assert_eq!(secure, Decision::Allow);
        let straddle = asc
            .check_access(WorldId::Normal, 0x0FF0, 0x20, AccessMode::Read)
            .unwrap();
        assert_eq!(straddle, Decision::Deny);
        let below = asc
            .check_access(WorldId::Normal, 0x0FF0, 0x10, AccessMode::Read)
            .unwrap();
        assert_eq!(below, Decision::Allow);
    }

    #[test]
    fn shared_regions_cannot_cover_secure_bytes() {
        let mut asc = AddressSpaceController::new();
        asc.carve_secure_region(0x1000, 0x1000).unwrap();
        assert!(asc.map_shared_region(0x1F00, 0x200).is_err());
        let shm = asc.map_shared_region(0x4000, 0x100).unwrap();
        assert_eq!(asc.region(shm).unwrap().owner, Owner::Shared);
        assert_eq!(
            asc.check_access(WorldId::Normal, 0x4000, 0x100, AccessMode::Write)
                .unwrap(),
            Decision::Allow
        );
    }

    #[test]
    fn region_memory_is_mediated() {
        let mut asc = AddressSpaceController::new();
        let sec = asc.carve_secure_region(0x1000, 0x100).unwrap();
        let shm = asc.map_shared_region(0x8000, 0x100).unwrap();
        let mut mem = RegionMemory::new();
        mem.write(&asc, WorldId::Secure, sec, 4, b"key").unwrap();
        assert_eq!(
            mem.read(&asc, WorldId::Secure, sec, 4, 3).unwrap(),
            b"key".to_vec()
        );
        assert!(matches!(
            mem.read(&asc, WorldId::Normal, sec, 4, 3),
            Err(TeeError::AccessDenied { .. })
        ));
        assert!(matches!(
            mem.write(&asc, WorldId::Normal, sec, 0, b"x"),
            Err(TeeError::AccessDenied { .. })
        ));
        mem.write(&asc, WorldId::Normal, shm, 0, b"hi").unwrap();
        assert_eq!(mem.read(&asc, WorldId::Secure, shm, 0, 2).unwrap(), b"hi");
        assert!(matches!(
            mem.write(&asc, WorldId::Secure, shm, 0xFF, b"xy"),
            Err(TeeError::Range { .. })
        ));
    }

    #[test]
    fn world_switch_accounting() {
        let mut ctx = WorldContext::new(WorldId::Normal);
        ctx.world_switch(WorldId::Secure);
        assert_eq!((ctx.current(), ctx.switch_count()), (WorldId::Secure, 1));
        ctx.world_switch(WorldId::Secure);
        assert_eq!((ctx.current(), ctx.switch_count()), (WorldId::Secure, 1));

        let mut ctx = WorldContext::with_cost(WorldId::Normal, 3);
        let mut expected = 0;
        for _ in 0..10 {
            let target = ctx.current().other();
            ctx.world_switch(target);
            expected += 1;
        }
        assert_eq!(ctx.switch_count(), expected);
        assert_eq!(ctx.switch_count(), 10);
        assert_eq!(ctx.switch_cost_units(), 30);
    }
}
