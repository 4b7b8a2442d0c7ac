//! Encode PCM frames onto a simulated I2S bus and decode them back.

use teeguard::audio::{decode_bitstream, encode_frame, encode_frames, I2sFrame, WORD_LENGTH};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = I2sFrame::new(0x1234, -2);
    let bits = encode_frame(frame, WORD_LENGTH)?;
    let ws: String = bits
        .clocks
        .iter()
        .map(|c| if c.ws { '1' } else { '0' })
        .collect();
    let sd: String = bits
        .clocks
        .iter()
        .map(|c| if c.sd { '1' } else { '0' })
        .collect();
    println!("ws {ws}\nsd {sd}");

    let frames: Vec<I2sFrame> = (0..8).map(|i| I2sFrame::new(i * 1000, -i * 1000)).collect();
    let stream = encode_frames(&frames, WORD_LENGTH)?;
    assert_eq!(decode_bitstream(&stream, WORD_LENGTH)?, frames);
    println!(
        "{} frames -> {} clocks -> round trip ok",
        frames.len(),
        stream.len()
    );

    let mut broken = stream.clone();
    broken.clocks[40].ws = !broken.clocks[40].ws;
    println!(
        "flipped ws: {}",
        decode_bitstream(&broken, WORD_LENGTH).unwrap_err()
    );
    broken = stream;
    broken.clocks.truncate(50);
    println!(
        "truncated: {}",
        decode_bitstream(&broken, WORD_LENGTH).unwrap_err()
    );
    println!("24-bit words: {}", encode_frame(frame, 24).unwrap_err());
    Ok(())
}
