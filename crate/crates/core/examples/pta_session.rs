//! A TA session against the audio PTA: status query, audio read, replay log.

use std::sync::Arc;

use teeguard::audio::{encode_frames, I2sFrame, WORD_LENGTH};
use teeguard::driver::{EncodedBlock, SecureDriver};
use teeguard::pta::{Param, PtaBridge, PtaCommand, ReplayLog, CMD_GET_STATUS, CMD_READ_AUDIO};
use teeguard::tee::{AddressSpaceController, WorldContext, WorldId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut asc = AddressSpaceController::new();
    let drv = asc.carve_secure_region(0x1000_0000, 0x1000)?;
    let ta_buf = asc.carve_secure_region(0x2000_0000, 0x1000)?;
    let driver = SecureDriver::init(&asc, drv, 256)?;
    let frames: Vec<I2sFrame> = (0..32).map(|i| I2sFrame::new(i, -i)).collect();
    driver.ingest_with_payload(
        &encode_frames(&frames, WORD_LENGTH)?,
        Some("play some music".into()),
    )?;

    let bridge = PtaBridge::new(Arc::new(asc), Arc::new(driver));
    bridge.record_replay(true);
    let session = bridge.open_session();
    let ctx = WorldContext::new(WorldId::Secure);

    let status = bridge.invoke(
        &PtaCommand::new(session, CMD_GET_STATUS, Default::default()),
        &ctx,
    );
    println!("GET_STATUS -> {:?} {:?}", status.status(), status.params[0]);

    let read = PtaCommand::new(
        session,
        CMD_READ_AUDIO,
        [
            Param::MemRef {
                region: ta_buf,
                offset: 0,
                length: 0x1000,
            },
            Param::Value { a: 32, b: 0 },
            Param::None,
            Param::None,
        ],
    );
    let resp = bridge.invoke(&read, &ctx);
    println!("READ_AUDIO -> {:?} {:?}", resp.status(), resp.params[1]);
    let block = EncodedBlock::from_bytes(&bridge.read_memref(WorldId::Secure, resp.params[0])?)?;
    println!(
        "block: {} frames, text {:?}",
        block.header.frame_count, block.attached_text
    );
    println!(
        "normal-world memref read: {}",
        bridge
            .read_memref(WorldId::Normal, resp.params[0])
            .unwrap_err()
    );

    let normal = WorldContext::new(WorldId::Normal);
    println!(
        "invoke from normal world -> {:?}",
        bridge.invoke(&read, &normal).status()
    );

    let log = bridge.take_replay().unwrap().render();
    print!("replay log:\n{log}");
    assert_eq!(ReplayLog::parse(&log)?.render(), log);
    bridge.close_session(session)?;
    Ok(())
}
