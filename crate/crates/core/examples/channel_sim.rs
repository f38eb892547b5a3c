//! Pushes a burst of map snapshots through the simulated uplink, with and
//! without supersession, and prints the delivery log.
//!
//! ```text
//! cargo run --example channel_sim
//! ```

use scenemap::transport::{Channel, ChannelConfig};

fn main() -> scenemap::Result<()> {
    for supersede in [false, true] {
        let mut ch = Channel::new(ChannelConfig {
            supersede,
            ..ChannelConfig::default()
        })?;
        // A snapshot every 2 s, each larger than the channel moves in 2 s.
        for n in 0..5 {
            ch.enqueue(&vec![0u8; 3000 + 500 * n], 2.0 * n as f64)?;
        }
        while ch.pending() > 0 {
            for id in ch.step(ch.config().tick) {
                let tx = ch.transmission(id).unwrap();
                println!(
                    "supersede={supersede} payload {id}: {} bytes queued at {:.1}s arrived at {:.3}s",
                    tx.total_bytes,
                    tx.enqueue_time,
                    tx.delivery_time.unwrap()
                );
            }
        }
        ch.write_delivery_log(std::io::stdout().lock())?;
        println!();
    }
    Ok(())
}
