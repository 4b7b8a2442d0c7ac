//! Feed the secure driver's ring buffer and drain it as encoded blocks.

use teeguard::audio::{encode_frames, GeneratorConfig, MicSource, WORD_LENGTH};
use teeguard::driver::{EncodedBlock, SecureDriver};
use teeguard::tee::{AccessMode, AddressSpaceController, WorldId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut asc = AddressSpaceController::new();
    let region = asc.carve_secure_region(0x1000_0000, 0x1000)?;
    let driver = SecureDriver::init(&asc, region, 128)?;
    let (base, len) = driver.buffer_range();
    println!(
        "ring at [{base:#x}, +{len}), normal world: {:?}",
        asc.check_access(WorldId::Normal, base, len, AccessMode::Read)?
    );

    let mut mic = MicSource::new(GeneratorConfig::default(), 3);
    for _ in 0..3 {
        let u = mic.capture(48);
        let accepted = driver.ingest_with_payload(
            &encode_frames(&u.frames, WORD_LENGTH)?,
            Some(u.payload_text),
        )?;
        println!(
            "ingested {accepted}/48 frames, occupancy {}, overruns {}",
            driver.occupancy(),
            driver.overrun_count()
        );
    }

    println!(
        "normal-world read: {}",
        driver.read_block(16, WorldId::Normal).unwrap_err()
    );
    while driver.occupancy() >= 48 {
        let block = driver.read_block(48, WorldId::Secure)?;
        let bytes = block.to_bytes();
        assert_eq!(EncodedBlock::from_bytes(&bytes)?, block);
        println!(
            "block seq={} frames={} bytes={} text={:?}",
            block.header.sequence,
            block.header.frame_count,
            bytes.len(),
            block.attached_text
        );
    }
    Ok(())
}
