use openscout_core::codec::{
    decode_packet, decode_remaining_length, encode_packet, encode_remaining_length, topic_matches, validate_filter,
    ConnAck, Connect, LastWill, Packet, PacketDecoder, Publish, QoS, SubAck, Subscribe, Unsubscribe,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::reference;
use crate::Verdict;

const ROUND_TRIPS: usize = 100_000;

pub fn conformance() -> Verdict {
    golden()?;
    remaining_length()?;
    let n = round_trip()?;
    let pairs = matcher()?;
    Ok(format!("3 golden frames exact, {n} random packets round-trip, {pairs} filter/topic pairs agree with the oracle"))
}

fn golden() -> Verdict {
    let mut cmd_vel = vec![0x30, 0x0E, 0x00, 0x0A];
    cmd_vel.extend_from_slice(b"os/cmd_vel");
    cmd_vel.extend_from_slice(b"go");
    let cases = [
        (Packet::Publish(Publish::new("os/cmd_vel", "go", false)), cmd_vel),
        (Packet::PingReq, vec![0xC0, 0x00]),
        (Packet::Publish(Publish::new("t", Vec::new(), false)), vec![0x30, 0x03, 0x00, 0x01, b't']),
    ];
    for (p, bytes) in cases {
        let enc = encode_packet(&p).map_err(|e| e.to_string())?;
        ensure!(enc == bytes, "{p:?} encodes to {enc:02X?}, expected {bytes:02X?}");
        let dec = decode_packet(&bytes).map_err(|e| e.to_string())?;
        ensure!(dec == Some((p.clone(), bytes.len())), "{bytes:02X?} decodes to {dec:?}");
    }
    Ok(String::new())
}

fn remaining_length() -> Verdict {
    for n in 0..100_000usize {
        let enc = encode_remaining_length(n).map_err(|e| e.to_string())?;
        let minimal = match n {
            0..=127 => 1,
            128..=16_383 => 2,
            _ => 3,
        };
        ensure!(enc.len() == minimal, "length {n} took {} bytes", enc.len());
        let dec = decode_remaining_length(&enc).map_err(|e| e.to_string())?;
        ensure!(dec == Some((n, enc.len())), "length {n}: {enc:02X?} decodes to {dec:?}");
    }
    ensure!(
        encode_remaining_length(268_435_456).is_err(),
        "remaining length above the 4-byte maximum was accepted"
    );
    Ok(String::new())
}

const CHARS: &[char] = &['a', 'b', 'z', '0', '9', '_', '-', ' ', '/', 'é', 'ß', '€', '中', '😀'];

fn text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| CHARS[rng.random_range(0..CHARS.len())]).collect()
}

fn topic(rng: &mut ChaCha8Rng) -> String {
    loop {
        let t = text(rng, 16);
        if !t.is_empty() {
            return t;
        }
    }
}

fn filter(rng: &mut ChaCha8Rng) -> String {
    let depth = rng.random_range(1..=4);
    let mut levels: Vec<String> = (0..depth)
        .map(|_| if rng.random_bool(0.25) { "+".into() } else { text(rng, 4).replace('/', "") })
        .collect();
    if rng.random_bool(0.3) {
        levels.push("#".into());
    }
    levels.join("/")
}

fn bytes(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = if rng.random_bool(0.05) {
        rng.random_range(128..20_000)
    } else {
        rng.random_range(0..64)
    };
    (0..n).map(|_| rng.random()).collect()
}

fn qos(rng: &mut ChaCha8Rng) -> QoS {
    [QoS::AtMostOnce, QoS::AtLeastOnce, QoS::ExactlyOnce][rng.random_range(0..3)]
}

fn packet_id(rng: &mut ChaCha8Rng) -> u16 {
    rng.random_range(1..=u16::MAX)
}

fn random_packet(rng: &mut ChaCha8Rng) -> Packet {
    match rng.random_range(0..10) {
        0 => {
            let mut c = Connect::new(text(rng, 23), rng.random());
            c.clean_session = rng.random();
            if rng.random_bool(0.5) {
                c.will = Some(LastWill {
                    topic: topic(rng),
                    payload: bytes(rng),
                    qos: qos(rng),
                    retain: rng.random(),
                });
            }
            if rng.random_bool(0.5) {
                c.username = Some(text(rng, 10));
                if rng.random_bool(0.5) {
                    c.password = Some(bytes(rng));
                }
            }
            Packet::Connect(c)
        }
        1 => {
            let code = rng.random_range(0..6);
            Packet::ConnAck(ConnAck {
                session_present: code == 0 && rng.random(),
                code,
            })
        }
        2..=4 => {
            let qos = qos(rng);
            let qos0 = qos == QoS::AtMostOnce;
            Packet::Publish(Publish {
                dup: !qos0 && rng.random(),
                qos,
                retain: rng.random(),
                topic: topic(rng),
                packet_id: (!qos0).then(|| packet_id(rng)),
                payload: bytes(rng),
            })
        }
        5 => Packet::Subscribe(Subscribe {
            packet_id: packet_id(rng),
            filters: (0..rng.random_range(1..5)).map(|_| (filter(rng), qos(rng))).collect(),
        }),
        6 => Packet::SubAck(SubAck {
            packet_id: packet_id(rng),
            return_codes: (0..rng.random_range(1..5))
                .map(|_| [0x00, 0x01, 0x02, 0x80][rng.random_range(0..4)])
                .collect(),
        }),
        7 => Packet::Unsubscribe(Unsubscribe {
            packet_id: packet_id(rng),
            filters: (0..rng.random_range(1..5)).map(|_| filter(rng)).collect(),
        }),
        8 => Packet::UnsubAck(packet_id(rng)),
        _ => [Packet::PingReq, Packet::PingResp, Packet::Disconnect][rng.random_range(0..3)].clone(),
    }
}

/// Each packet alone, then all of them as one stream cut at random points.
fn round_trip() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c0dec);
    let mut stream = Vec::new();
    let mut packets = Vec::with_capacity(ROUND_TRIPS);
    for i in 0..ROUND_TRIPS {
        let p = random_packet(&mut rng);
        let enc = encode_packet(&p).map_err(|e| format!("packet {i} {p:?}: {e}"))?;
        let dec = decode_packet(&enc).map_err(|e| format!("packet {i} {p:?}: {e}"))?;
        ensure!(dec.as_ref() == Some(&(p.clone(), enc.len())), "packet {i}: {p:?} came back as {dec:?}");
        stream.extend_from_slice(&enc);
        packets.push(p);
    }
    let mut dec = PacketDecoder::new(usize::MAX);
    let mut next = 0;
    let mut at = 0;
    while at < stream.len() {
        let end = (at + rng.random_range(1..3000)).min(stream.len());
        dec.feed(&stream[at..end]);
        at = end;
        while let Some(p) = dec.next_packet().map_err(|e| format!("stream: {e}"))? {
            ensure!(p == packets[next], "stream packet {next} came back as {p:?}");
            next += 1;
        }
    }
    ensure!(next == packets.len(), "stream yielded {next} of {} packets", packets.len());
    Ok(packets.len())
}

fn enumerate(alphabet: &[&str], max_depth: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<&str>> = vec![vec![]];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for prefix in &frontier {
            for l in alphabet {
                let mut p = prefix.clone();
                p.push(l);
                out.push(p.join("/"));
                next.push(p);
            }
        }
        frontier = next;
    }
    out
}

/// Every topic over {a, b} against every filter over {a, b, +, #}, up to
/// four levels each.
fn matcher() -> Result<usize, String> {
    ensure!(reference::matcher_self_check(), "reference matcher fails its own examples");
    let topics = enumerate(&["a", "b"], 4);
    let candidates = enumerate(&["a", "b", "+", "#"], 4);
    let mut pairs = 0;
    let mut valid = 0;
    for f in &candidates {
        let parsed = validate_filter(f);
        ensure!(
            parsed.is_ok() == reference::filter_is_valid(f),
            "filter {f:?}: validate_filter says {parsed:?}"
        );
        let Ok(parsed) = parsed else { continue };
        valid += 1;
        for t in &topics {
            let want = reference::matches(f, t);
            ensure!(topic_matches(&parsed, t) == want, "({f:?}, {t:?}): expected {want}");
            pairs += 1;
        }
    }
    ensure!(topics.len() == 30 && valid == 160, "enumeration sizes {} topics, {valid} filters", topics.len());
    Ok(pairs)
}
