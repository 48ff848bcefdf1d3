//! Scoped flush-to-zero / denormals-are-zero mode.
//!
//! Once a network fits its training targets, squared backpropagated
//! derivatives underflow into the subnormal range, and on x86 every
//! multiply touching them takes a microcode slow path. That made metric
//! accumulation up to ~1.5x slower late in training. Values that small
//! carry no weight next to the metric's other entries, so they are flushed.

#[cfg(target_arch = "x86_64")]
#[allow(deprecated)]
mod imp {
    use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};

    const FTZ_DAZ: u32 = 0x8040;

    pub struct FlushSubnormals(u32);

    impl FlushSubnormals {
        pub fn new() -> Self {
            // SAFETY: SSE is part of the x86-64 baseline; only the FTZ and
            // DAZ bits of MXCSR change, and they are restored on drop.
            let saved = unsafe { _mm_getcsr() };
            unsafe { _mm_setcsr(saved | FTZ_DAZ) };
            Self(saved)
        }
    }

    impl Drop for FlushSubnormals {
        fn drop(&mut self) {
            // SAFETY: restores the register value read in `new`.
            unsafe { _mm_setcsr(self.0) };
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod imp {
    pub struct FlushSubnormals;

    impl FlushSubnormals {
        pub fn new() -> Self {
            Self
        }
    }
}

pub(crate) use imp::FlushSubnormals;
