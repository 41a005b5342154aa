//! Backend wrapper that waits a fixed delay before every token.

use std::ops::ControlFlow;
use std::sync::Arc;
use std::time::{Duration, Instant};

use radassist_core::completion::StreamEnd;
use radassist_core::{Backend, BackendError, BackendParams, TokenSink};

const POLL: Duration = Duration::from_millis(2);

pub struct Paced {
    inner: Arc<dyn Backend>,
    delay: Duration,
}

impl Paced {
    pub fn new(inner: Arc<dyn Backend>, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

struct PacedSink<'a> {
    inner: &'a mut dyn TokenSink,
    delay: Duration,
}

impl TokenSink for PacedSink<'_> {
    fn token(&mut self, token: &str) -> ControlFlow<()> {
        let until = Instant::now() + self.delay;
        loop {
            if self.inner.cancelled() {
                return ControlFlow::Break(());
            }
            let now = Instant::now();
            if now >= until {
                break;
            }
            std::thread::sleep(POLL.min(until - now));
        }
        self.inner.token(token)
    }

    fn cancelled(&self) -> bool {
        self.inner.cancelled()
    }
}

impl Backend for Paced {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(
        &self,
        prompt: &str,
        params: &BackendParams,
        sink: &mut dyn TokenSink,
    ) -> Result<StreamEnd, BackendError> {
        let mut paced = PacedSink {
            inner: sink,
            delay: self.delay,
        };
        self.inner.generate(prompt, params, &mut paced)
    }
}
