//! Filter verdicts and relay the survivors to an in-process mock cloud over
//! TCP, counting world switches.

use teeguard::classifier::{classify, KeywordOracle, Transcript, Vocab};
use teeguard::relay::{
    filter, handshake, relay_send, Action, FilterPolicy, MockCloud, Outcome, RedactionLog,
    RelayPacket, TcpConnector,
};
use teeguard::tee::{WorldContext, WorldId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cloud = MockCloud::serve("127.0.0.1:0")?;
    let oracle = KeywordOracle {
        keywords: vec!["pin".into(), "password".into()],
    };
    let vocab = Vocab::from_words(["my", "pin", "is"]);
    let utterances = [
        "turn on the kitchen lights",
        "my pin is 4821",
        "play some music",
        "the wifi password is hunter2",
    ];

    for action in [Action::Drop, Action::Mask] {
        let policy = FilterPolicy::new(0.5, action)?;
        let mut conn = handshake(TcpConnector::new(cloud.local_addr().to_string()))?;
        let mut ctx = WorldContext::new(WorldId::Secure);
        let mut log = RedactionLog::default();
        let mut seq = 0;
        for (i, text) in utterances.iter().enumerate() {
            let transcript = Transcript::new(*text, &vocab);
            let verdict = classify(&oracle, &transcript, policy.threshold);
            let outcome = filter(&verdict, &transcript, &policy);
            log.push(i as u32, &verdict, &outcome);
            if let Outcome::Forward { payload, masked } = outcome {
                relay_send(
                    &RelayPacket::new(seq, &payload, masked),
                    &mut conn,
                    &mut ctx,
                )?;
                seq += 1;
            }
        }
        conn.close()?;
        println!(
            "policy {action}: {} sends, {} world switches",
            seq,
            ctx.switch_count()
        );
        print!("{}", log.render());
    }

    for p in cloud.shutdown() {
        println!(
            "cloud got seq={} masked={} {:?}",
            p.sequence,
            p.is_masked(),
            String::from_utf8_lossy(&p.payload)
        );
    }
    Ok(())
}
