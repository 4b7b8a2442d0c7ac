//! Carve secure memory and probe it from both worlds.

use teeguard::tee::{AccessMode, AddressSpaceController, RegionMemory, WorldContext, WorldId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut asc = AddressSpaceController::new();
    let secure = asc.carve_secure_region(0x1000, 0x1000)?;
    let shared = asc.map_shared_region(0x4000, 0x100)?;
    println!("regions: {:?}", asc.regions());

    for (world, base, len) in [
        (WorldId::Normal, 0x1800, 16),
        (WorldId::Secure, 0x1800, 16),
        (WorldId::Normal, 0x0ff0, 32), // straddles the carve-out
        (WorldId::Normal, 0x4000, 0x100),
        (WorldId::Normal, 0x9000, 8),
    ] {
        let d = asc.check_access(world, base, len, AccessMode::Read)?;
        println!("{world:?} read [{base:#x}, +{len}) -> {d:?}");
    }

    if let Err(e) = asc.carve_secure_region(0x1f00, 0x200) {
        println!("overlapping carve rejected: {e}");
    }

    let mut mem = RegionMemory::new();
    mem.write(&asc, WorldId::Secure, secure, 0, b"key material")?;
    println!(
        "normal-world read of secure region: {:?}",
        mem.read(&asc, WorldId::Normal, secure, 0, 12).unwrap_err()
    );
    mem.write(&asc, WorldId::Normal, shared, 0, b"hello")?;
    println!(
        "secure read of shared: {:?}",
        String::from_utf8(mem.read(&asc, WorldId::Secure, shared, 0, 5)?)?
    );

    let mut ctx = WorldContext::with_cost(WorldId::Normal, 40);
    ctx.world_switch(WorldId::Secure);
    ctx.world_switch(WorldId::Normal);
    println!(
        "switches={} cost_units={}",
        ctx.switch_count(),
        ctx.switch_cost_units()
    );
    Ok(())
}
