mod common;

use common::{ByteOracle, FifoModel};
use proptest::prelude::*;
use teeguard::audio::{decode_bitstream, encode_frames, I2sFrame, WORD_LENGTH};
use teeguard::driver::{EncodedBlock, SecureDriver};
use teeguard::pta::{Param, PtaCommand, PtaResponse};
use teeguard::relay::{Ack, RelayPacket};
use teeguard::tee::{AccessMode, AddressSpaceController, Decision, RegionId, WorldId};
use teeguard::trace::{parse_trace, render_trace};

const WINDOW: u64 = 512;

fn mapping() -> impl Strategy<Value = (u64, u64, bool)> {
    (0..WINDOW - 1).prop_flat_map(|base| (Just(base), 1..=(WINDOW - base).min(96), any::<bool>()))
}

fn param() -> impl Strategy<Value = Param> {
    prop_oneof![
        Just(Param::None),
        (any::<u32>(), any::<u32>()).prop_map(|(a, b)| Param::Value { a, b }),
        (any::<u16>(), any::<u16>(), any::<u32>()).prop_map(|(r, offset, length)| Param::MemRef {
            region: RegionId(r),
            offset,
            length
        }),
    ]
}

proptest! {
    #[test]
    fn access_decisions_match_byte_oracle(
        origin in prop_oneof![Just(0u64), Just(1u64 << 40), Just(u64::MAX - WINDOW)],
        maps in prop::collection::vec(mapping(), 0..8),
        probes in prop::collection::vec(mapping(), 1..24),
    ) {
        let mut asc = AddressSpaceController::new();
        let mut oracle = ByteOracle::new(origin, WINDOW as usize);
        for (base, len, secure) in maps {
            let accepted = if secure {
                asc.carve_secure_region(origin + base, len).is_ok()
            } else {
                asc.map_shared_region(origin + base, len).is_ok()
            };
            prop_assert_eq!(accepted, oracle.map(origin + base, len, secure));
        }
        for (base, len, _) in probes {
            let expect = if oracle.normal_allowed(origin + base, len) { Decision::Allow } else { Decision::Deny };
            prop_assert_eq!(asc.check_access(WorldId::Normal, origin + base, len, AccessMode::Read).unwrap(), expect);
            prop_assert_eq!(asc.check_access(WorldId::Secure, origin + base, len, AccessMode::Write).unwrap(), Decision::Allow);
        }
    }

    #[test]
    fn i2s_round_trip(raw in prop::collection::vec(any::<(i16, i16)>(), 0..64)) {
        let frames: Vec<I2sFrame> = raw.iter().map(|&(l, r)| I2sFrame::new(l, r)).collect();
        let bits = encode_frames(&frames, WORD_LENGTH).unwrap();
        prop_assert_eq!(bits.len(), frames.len() * 2 * WORD_LENGTH);
        prop_assert_eq!(decode_bitstream(&bits, WORD_LENGTH).unwrap(), frames);
    }

    #[test]
    fn driver_behaves_like_bounded_fifo(
        cap in 1usize..64,
        ops in prop::collection::vec((any::<bool>(), 1usize..40), 1..40),
    ) {
        let mut asc = AddressSpaceController::new();
        let region = asc.carve_secure_region(0x1000, 0x1000).unwrap();
        let driver = SecureDriver::init(&asc, region, cap).unwrap();
        let mut model = FifoModel::new(cap);
        let mut next = 0u32;
        for (push, n) in ops {
            if push {
                let vals: Vec<u32> = (next..next + n as u32).collect();
                next += n as u32;
                let frames: Vec<I2sFrame> = vals.iter().map(|&v| I2sFrame::from_bits(v)).collect();
                let accepted = driver.ingest(&encode_frames(&frames, WORD_LENGTH).unwrap()).unwrap();
                prop_assert_eq!(accepted, model.push_all(&vals));
            } else {
                match (driver.read_block(n, WorldId::Secure), model.pop(n)) {
                    (Ok(block), Some(expect)) => {
                        let got: Vec<u32> = block.frames().iter().map(|f| f.to_bits()).collect();
                        prop_assert_eq!(got, expect);
                    }
                    (Err(_), None) => {}
                    (got, expect) => prop_assert!(false, "driver {:?} vs model {:?}", got.is_ok(), expect.is_some()),
                }
            }
            prop_assert_eq!(driver.occupancy(), model.items.len());
            prop_assert_eq!(driver.overrun_count(), model.overruns);
        }
    }

    #[test]
    fn encoded_block_round_trip(
        seq in any::<u32>(),
        raw in prop::collection::vec(any::<u32>(), 0..32),
        text in prop::option::of("\\PC{1,40}"),
    ) {
        let frames: Vec<I2sFrame> = raw.into_iter().map(I2sFrame::from_bits).collect();
        let block = EncodedBlock::new(seq, &frames, text);
        let bytes = block.to_bytes();
        prop_assert_eq!(bytes.len(), block.encoded_len());
        prop_assert_eq!(EncodedBlock::from_bytes(&bytes).unwrap(), block);
    }

    #[test]
    fn empty_trailer_text_decodes_as_absent(raw in prop::collection::vec(any::<u32>(), 0..8)) {
        let frames: Vec<I2sFrame> = raw.into_iter().map(I2sFrame::from_bits).collect();
        let bytes = EncodedBlock::new(3, &frames, Some(String::new())).to_bytes();
        prop_assert_eq!(EncodedBlock::from_bytes(&bytes).unwrap().attached_text, None);
    }

    #[test]
    fn pta_wire_round_trip(session in any::<u32>(), cmd in any::<u32>(), status in any::<u32>(), p in prop::array::uniform4(param())) {
        let c = PtaCommand::new(session, cmd, p);
        prop_assert_eq!(PtaCommand::from_bytes(&c.to_bytes()).unwrap(), c);
        // Error responses carry no out-params.
        let params = if status == 0 { p } else { [Param::None; 4] };
        let r = PtaResponse { status, params };
        prop_assert_eq!(PtaResponse::from_bytes(&r.to_bytes()).unwrap(), r);
    }

    #[test]
    fn relay_wire_round_trip(seq in any::<u32>(), text in "\\PC{0,200}", masked in any::<bool>(), status in any::<u32>()) {
        let p = RelayPacket::new(seq, &text, masked);
        prop_assert_eq!(RelayPacket::from_bytes(&p.to_bytes()).unwrap(), p);
        let a = Ack { sequence: seq, status };
        prop_assert_eq!(Ack::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn trace_render_parse_identity(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let t = common::random_trace(&mut rng, 12, 3);
        let events = parse_trace(&t.text).unwrap();
        prop_assert_eq!(render_trace(&events), t.text.clone());
        prop_assert_eq!(parse_trace(&render_trace(&events)).unwrap(), events);
    }
}
