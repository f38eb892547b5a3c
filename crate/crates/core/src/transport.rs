//! Simulated rate-limited uplink.
//!
//! Payloads are cut into packets of `packet_size` bytes, each carrying
//! `per_packet_overhead` bytes of framing, and serialized back to back at
//! `rate` bits per second. The last packet of a payload is short: a payload
//! of `n` bytes occupies `n + packets · overhead` bytes on the wire. Delivery
//! times are scheduled when a payload is enqueued and revised only when a
//! queued payload is superseded.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PayloadId = u64;
pub type StreamId = u32;

/// A channel shared between a snapshot producer and the replay loop.
pub type SharedChannel = Arc<Mutex<Channel>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Bits per second.
    pub rate: f64,
    /// Bytes per packet, framing included.
    pub packet_size: usize,
    pub per_packet_overhead: usize,
    /// Step length used by replay loops, in seconds.
    pub tick: f64,
    /// Drop queued, not yet started payloads when a newer one arrives on the
    /// same stream.
    pub supersede: bool,
    /// Constant latency added after serialization, in seconds.
    pub propagation_delay: f64,
    /// Probability that a packet is lost and sent again.
    pub packet_loss: f64,
    /// Seeds the loss draws.
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            rate: 10_000.0,
            packet_size: 256,
            per_packet_overhead: 16,
            tick: 0.1,
            supersede: true,
            propagation_delay: 0.0,
            packet_loss: 0.0,
            seed: 0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::invalid(format!("rate must be positive, got {}", self.rate)));
        }
        if self.packet_size <= self.per_packet_overhead {
            return Err(Error::invalid(format!(
                "packet_size {} must exceed per_packet_overhead {}",
                self.packet_size, self.per_packet_overhead
            )));
        }
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return Err(Error::invalid(format!("tick must be positive, got {}", self.tick)));
        }
        if !(self.propagation_delay.is_finite() && self.propagation_delay >= 0.0) {
            return Err(Error::invalid("propagation_delay must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.packet_loss) {
            return Err(Error::invalid("packet_loss must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Payload bytes carried by one packet.
    pub fn payload_per_packet(&self) -> usize {
        self.packet_size - self.per_packet_overhead
    }

    pub fn packets_for(&self, bytes: usize) -> usize {
        bytes.div_ceil(self.payload_per_packet())
    }

    /// Seconds to serialize `wire_bytes` bytes.
    pub fn serialization_time(&self, wire_bytes: usize) -> f64 {
        (wire_bytes as f64 * 8.0) / self.rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Queued,
    Delivered,
    Superseded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub id: PayloadId,
    pub stream: StreamId,
    pub enqueue_time: f64,
    /// Payload bytes, framing excluded.
    pub total_bytes: usize,
    pub packets: usize,
    /// Bytes serialized, framing and retransmissions included.
    pub wire_bytes: usize,
    pub start_time: f64,
    pub finish_time: f64,
    /// Set once the payload has been handed to the operator.
    pub delivery_time: Option<f64>,
    pub status: Status,
}

impl Transmission {
    fn scheduled_delivery(&self, delay: f64) -> f64 {
        self.finish_time + delay
    }
}

#[derive(Clone, Debug)]
pub struct Channel {
    cfg: ChannelConfig,
    now: f64,
    log: Vec<Transmission>,
    /// Undelivered, non-superseded ids in FIFO order.
    queue: VecDeque<PayloadId>,
    delivered_bytes: usize,
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Channel {
            cfg,
            now: 0.0,
            log: Vec::new(),
            queue: VecDeque::new(),
            delivered_bytes: 0,
            rng,
        })
    }

    pub fn shared(self) -> SharedChannel {
        Arc::new(Mutex::new(self))
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn transmission(&self, id: PayloadId) -> Option<&Transmission> {
        self.log.get(id as usize)
    }

    /// Every payload ever enqueued, by id.
    pub fn transmissions(&self) -> &[Transmission] {
        &self.log
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn delivered_bytes(&self) -> usize {
        self.delivered_bytes
    }

    /// Enqueues a payload on stream 0.
    pub fn enqueue(&mut self, payload: &[u8], t_now: f64) -> Result<PayloadId> {
        self.enqueue_len(0, payload.len(), t_now)
    }

    pub fn enqueue_on(&mut self, stream: StreamId, payload: &[u8], t_now: f64) -> Result<PayloadId> {
        self.enqueue_len(stream, payload.len(), t_now)
    }

    /// Enqueues a payload known only by its length.
    pub fn enqueue_len(&mut self, stream: StreamId, bytes: usize, t_now: f64) -> Result<PayloadId> {
        if bytes == 0 {
            return Err(Error::invalid("empty payload"));
        }
        if !t_now.is_finite() || t_now < self.now {
            return Err(Error::invalid(format!(
                "enqueue time {t_now} precedes channel clock {}",
                self.now
            )));
        }
        if self.cfg.supersede {
            self.supersede(stream, t_now);
        }
        let packets = self.cfg.packets_for(bytes);
        let mut sends = packets;
        if self.cfg.packet_loss > 0.0 {
            for _ in 0..packets {
                while self.rng.random::<f64>() < self.cfg.packet_loss {
                    sends += 1;
                }
            }
        }
        // Retransmitted packets are counted at full size.
        let extra = sends - packets;
        let wire_bytes = bytes + packets * self.cfg.per_packet_overhead + extra * self.cfg.packet_size;
        let start = self.busy_until().max(t_now);
        let finish = start + self.cfg.serialization_time(wire_bytes);
        let id = self.log.len() as PayloadId;
        self.log.push(Transmission {
            id,
            stream,
            enqueue_time: t_now,
            total_bytes: bytes,
            packets,
            wire_bytes,
            start_time: start,
            finish_time: finish,
            delivery_time: None,
            status: Status::Queued,
        });
        self.queue.push_back(id);
        Ok(id)
    }

    fn busy_until(&self) -> f64 {
        self.queue
            .back()
            .map(|&id| self.log[id as usize].finish_time)
            .unwrap_or(f64::NEG_INFINITY)
    }

    fn supersede(&mut self, stream: StreamId, t_now: f64) {
        let before = self.queue.len();
        let log = &mut self.log;
        self.queue.retain(|&id| {
            let tx = &mut log[id as usize];
            if tx.stream == stream && tx.start_time > t_now {
                tx.status = Status::Superseded;
                false
            } else {
                true
            }
        });
        if self.queue.len() == before {
            return;
        }
        let mut busy = f64::NEG_INFINITY;
        for &id in &self.queue {
            let tx = &mut self.log[id as usize];
            if tx.start_time > t_now {
                let duration = tx.finish_time - tx.start_time;
                tx.start_time = busy.max(tx.enqueue_time);
                tx.finish_time = tx.start_time + duration;
            }
            busy = tx.finish_time;
        }
    }

    /// Advances the clock by `dt` seconds and returns the payloads delivered
    /// during the step, oldest first. Non-positive steps do nothing.
    pub fn step(&mut self, dt: f64) -> Vec<PayloadId> {
        if dt.is_nan() || dt <= 0.0 {
            return Vec::new();
        }
        self.advance_to(self.now + dt)
    }

    pub fn advance_to(&mut self, t: f64) -> Vec<PayloadId> {
        if t.is_nan() || t <= self.now {
            return Vec::new();
        }
        self.now = t;
        self.deliver_due()
    }

    /// Runs the clock until every queued payload is delivered.
    pub fn drain(&mut self) -> Vec<PayloadId> {
        if let Some(&last) = self.queue.back() {
            let end = self.log[last as usize].scheduled_delivery(self.cfg.propagation_delay);
            self.now = self.now.max(end);
        }
        self.deliver_due()
    }

    fn deliver_due(&mut self) -> Vec<PayloadId> {
        let delay = self.cfg.propagation_delay;
        let mut out = Vec::new();
        while let Some(&id) = self.queue.front() {
            let tx = &mut self.log[id as usize];
            let at = tx.scheduled_delivery(delay);
            if at > self.now {
                break;
            }
            tx.delivery_time = Some(at);
            tx.status = Status::Delivered;
            self.delivered_bytes += tx.total_bytes;
            self.queue.pop_front();
            out.push(id);
        }
        out
    }

    /// Wire bytes serialized during `[t0, t1]`, counting partially sent
    /// payloads pro rata.
    pub fn wire_bytes_between(&self, t0: f64, t1: f64) -> f64 {
        self.log
            .iter()
            .filter(|tx| tx.status != Status::Superseded)
            .map(|tx| {
                let lo = tx.start_time.max(t0);
                let hi = tx.finish_time.min(t1);
                let span = tx.finish_time - tx.start_time;
                if hi <= lo || span <= 0.0 {
                    0.0
                } else {
                    tx.wire_bytes as f64 * (hi - lo) / span
                }
            })
            .sum()
    }

    /// Delivery log: one comma-separated row per payload.
    pub fn write_delivery_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "stream",
            "bytes",
            "packets",
            "wire_bytes",
            "enqueue_time",
            "delivery_time",
            "status",
        ])?;
        for tx in &self.log {
            let status = match tx.status {
                Status::Queued => "queued",
                Status::Delivered => "delivered",
                Status::Superseded => "superseded",
            };
            w.write_record([
                tx.id.to_string(),
                tx.stream.to_string(),
                tx.total_bytes.to_string(),
                tx.packets.to_string(),
                tx.wire_bytes.to_string(),
                tx.enqueue_time.to_string(),
                tx.delivery_time.map(|t| t.to_string()).unwrap_or_default(),
                status.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_overhead() -> ChannelConfig {
        ChannelConfig {
            per_packet_overhead: 0,
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn idle_channel_delivers_after_serialization() {
        let mut ch = Channel::new(zero_overhead()).unwrap();
        let id = ch.enqueue(&[0u8; 1250], 0.0).unwrap();
        assert_eq!(ch.transmission(id).unwrap().packets, 5);
        assert!(ch.step(0.5).is_empty());
        assert_eq!(ch.step(0.5), vec![id]);
        assert_eq!(ch.transmission(id).unwrap().delivery_time, Some(1.0));
    }

    #[test]
    fn back_to_back_payloads_add_up() {
        let mut ch = Channel::new(zero_overhead()).unwrap();
        let a = ch.enqueue(&[0u8; 1250], 2.0).unwrap();
        let b = ch.enqueue(&[0u8; 500], 2.0).unwrap();
        ch.drain();
        assert_eq!(ch.transmission(a).unwrap().delivery_time, Some(3.0));
        assert_eq!(ch.transmission(b).unwrap().delivery_time, Some(3.4));
    }

    #[test]
    fn one_byte_is_one_packet() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        let id = ch.enqueue(&[7], 0.0).unwrap();
        let tx = ch.transmission(id).unwrap();
        assert_eq!(tx.packets, 1);
        assert_eq!(tx.wire_bytes, 17);
    }

    #[test]
    fn empty_payload_and_bad_config_are_rejected() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        assert!(ch.enqueue(&[], 0.0).is_err());
        let bad = ChannelConfig {
            packet_size: 16,
            ..ChannelConfig::default()
        };
        assert!(Channel::new(bad).is_err());
        let bad = ChannelConfig {
            rate: 0.0,
            ..ChannelConfig::default()
        };
        assert!(Channel::new(bad).is_err());
    }

    #[test]
    fn empty_queue_steps_deliver_nothing() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        assert!(ch.step(1.0).is_empty());
        assert!(ch.drain().is_empty());
    }

    #[test]
    fn supersede_drops_only_unstarted_payloads() {
        let mut ch = Channel::new(zero_overhead()).unwrap();
        let a = ch.enqueue(&[0u8; 1250], 0.0).unwrap();
        let b = ch.enqueue(&[0u8; 1250], 0.1).unwrap();
        let c = ch.enqueue(&[0u8; 625], 0.2).unwrap();
        assert_eq!(ch.transmission(b).unwrap().status, Status::Superseded);
        let delivered = ch.drain();
        assert_eq!(delivered, vec![a, c]);
        assert_eq!(ch.transmission(c).unwrap().delivery_time, Some(1.5));
    }

    #[test]
    fn supersede_leaves_other_streams_alone() {
        let mut ch = Channel::new(zero_overhead()).unwrap();
        ch.enqueue_on(0, &[0u8; 100], 0.0).unwrap();
        let b = ch.enqueue_on(1, &[0u8; 100], 0.0).unwrap();
        ch.enqueue_on(0, &[0u8; 100], 0.0).unwrap();
        assert_eq!(ch.transmission(b).unwrap().status, Status::Queued);
        assert_eq!(ch.drain().len(), 3);
    }

    #[test]
    fn propagation_delay_shifts_delivery() {
        let cfg = ChannelConfig {
            propagation_delay: 0.25,
            ..zero_overhead()
        };
        let mut ch = Channel::new(cfg).unwrap();
        let id = ch.enqueue(&[0u8; 1250], 0.0).unwrap();
        assert!(ch.advance_to(1.0).is_empty());
        assert_eq!(ch.advance_to(1.25), vec![id]);
    }

    #[test]
    fn loss_only_adds_wire_bytes() {
        let cfg = ChannelConfig {
            packet_loss: 0.3,
            seed: 9,
            ..ChannelConfig::default()
        };
        let mut ch = Channel::new(cfg).unwrap();
        let id = ch.enqueue(&[0u8; 10_000], 0.0).unwrap();
        let tx = ch.transmission(id).unwrap().clone();
        assert!(tx.wire_bytes > 10_000 + tx.packets * 16);
        assert_eq!(ch.drain(), vec![id]);
    }

    #[test]
    fn delivery_log_has_one_row_per_payload() {
        let mut ch = Channel::new(ChannelConfig::default()).unwrap();
        ch.enqueue(&[0u8; 300], 0.0).unwrap();
        ch.enqueue(&[0u8; 300], 0.0).unwrap();
        ch.drain();
        let mut buf = Vec::new();
        ch.write_delivery_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("id,stream,bytes"));
    }

    proptest! {
        #[test]
        fn newer_snapshot_never_arrives_first(
            sizes in prop::collection::vec((1usize..3000, 0.0f64..2.0), 1..30),
        ) {
            let mut ch = Channel::new(ChannelConfig::default()).unwrap();
            let mut t = 0.0;
            for (n, gap) in sizes {
                t += gap;
                ch.enqueue(&vec![0u8; n], t).unwrap();
            }
            ch.drain();
            let mut last = f64::NEG_INFINITY;
            for tx in ch.transmissions() {
                match tx.status {
                    Status::Delivered => {
                        let d = tx.delivery_time.unwrap();
                        prop_assert!(d >= last);
                        prop_assert!(d >= tx.enqueue_time);
                        last = d;
                    }
                    Status::Superseded => {}
                    Status::Queued => prop_assert!(false, "undelivered after drain"),
                }
            }
        }
    }
}
