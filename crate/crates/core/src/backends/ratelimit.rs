use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket shared by all threads using one backend.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `rate` tokens per second with a burst of `capacity`. A rate of zero
    /// disables limiting.
    pub fn new(rate: f64, capacity: f64) -> Self {
        let capacity = capacity.max(1.0);
        Self {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes one token, sleeping until one is available.
    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter lock poisoned");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_bucket_never_blocks() {
        let b = TokenBucket::new(0.0, 1.0);
        let t = Instant::now();
        for _ in 0..1000 {
            b.acquire();
        }
        assert!(t.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn limits_after_burst() {
        let b = TokenBucket::new(50.0, 2.0);
        let t = Instant::now();
        for _ in 0..5 {
            b.acquire();
        }
        // two burst tokens, then three more at 20 ms each
        assert!(t.elapsed() >= Duration::from_millis(50));
    }
}
