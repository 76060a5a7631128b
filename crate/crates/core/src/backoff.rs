/// Spin-then-yield waiting used while a slot lock is held by another thread.
pub(crate) struct Backoff {
    step: u32,
}

const SPIN_LIMIT: u32 = 6;

impl Backoff {
    pub(crate) fn new() -> Self {
        Backoff { step: 0 }
    }

    pub(crate) fn snooze(&mut self) {
        if self.step <= SPIN_LIMIT {
            for _ in 0..(1u32 << self.step) {
                core::hint::spin_loop();
            }
            self.step += 1;
        } else {
            #[cfg(any(test, feature = "std"))]
            std::thread::yield_now();
            #[cfg(not(any(test, feature = "std")))]
            for _ in 0..(1u32 << SPIN_LIMIT) {
                core::hint::spin_loop();
            }
        }
    }
}
