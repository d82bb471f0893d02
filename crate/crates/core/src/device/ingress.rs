use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::TcpListener;
use tracing::{debug, info, warn};

use super::Device;
use crate::agents::Stimulus;

/// Polls the reader's inventory and reports each tag once per entry into the field.
pub async fn poll_reader(device: Arc<Device>, interval: Duration) {
    let mut seen = BTreeSet::new();
    let mut ticker = tokio::time::interval(interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        ticker.tick().await;
        let uids: BTreeSet<u64> = match device.ctx.reader.inventory().await {
            Ok(uids) => uids.into_iter().collect(),
            Err(e) => {
                debug!("inventory failed: {e}");
                continue;
            }
        };
        for uid in uids.difference(&seen) {
            if device.submit(Stimulus::TagArrived { uid: *uid }).is_err() {
                return;
            }
        }
        seen = uids;
    }
}

/// Accepts medical-device connections speaking the line protocol.
pub async fn serve_vitals(listener: TcpListener, device: Arc<Device>) -> std::io::Result<()> {
    info!(addr = ?listener.local_addr().ok(), "vitals listening");
    loop {
        let (stream, peer) = listener.accept().await?;
        let device = device.clone();
        tokio::spawn(async move {
            let mut lines = BufReader::new(stream).lines();
            loop {
                match lines.next_line().await {
                    Ok(Some(line)) if line.trim().is_empty() => {}
                    Ok(Some(line)) => {
                        device.submit_vital_line(&line);
                    }
                    Ok(None) => break,
                    Err(e) => {
                        warn!(%peer, "vitals connection: {e}");
                        break;
                    }
                }
            }
        });
    }
}
