//! The discrete-event kernel on its own: a ping-pong between two entities.
//!
//!     cargo run --example event_kernel

use qnet::simkernel::{Event, HandlerError, Timeline};
use rand::Rng;

#[derive(Debug, Clone)]
enum Msg {
    Ping(u32),
}

fn main() {
    // one microsecond of simulated time
    let mut tl: Timeline<Msg> = Timeline::new(1_000_000, 7);
    let progress = tl.progress_handle();
    tl.schedule(0, 0, Msg::Ping(0)).unwrap();

    let mut log = Vec::new();
    let mut handler = |e: Event<Msg>, tl: &mut Timeline<Msg>| -> Result<(), HandlerError> {
        let Msg::Ping(n) = e.payload;
        log.push((e.time, e.target, n));
        let jitter = tl.rng().random_range(0..5_000);
        tl.schedule(e.time + 50_000 + jitter, 1 - e.target, Msg::Ping(n + 1))?;
        Ok(())
    };
    let stats = tl.run(&mut handler).unwrap();

    for (t, who, n) in log.iter().take(5) {
        println!("{t:>9} ps  entity {who} got ping {n}");
    }
    println!(
        "{} events, clock at {} ps, progress {:.2}, {} still queued",
        stats.events_processed,
        stats.final_time,
        progress.get(),
        tl.pending()
    );
}
