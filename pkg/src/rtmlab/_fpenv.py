"""MXCSR access for numba kernels (flush-to-zero / denormals-are-zero).

Wavefront tails decay through the subnormal range, where x86 arithmetic is
one to two orders of magnitude slower. Kernels enable FTZ|DAZ on entry and
restore the caller's MXCSR on exit, so the setting never leaks into numpy
code running on the same thread. On other architectures these are no-ops.
"""
import platform

import numba
import numpy as np

FTZ_DAZ = np.uint32(0x8040)

if platform.machine().lower() in ("x86_64", "amd64"):
    from llvmlite import ir
    from numba import types
    from numba.core import cgutils
    from numba.extending import intrinsic

    def _mxcsr_fn(builder, name):
        i8p = ir.IntType(8).as_pointer()
        fnty = ir.FunctionType(ir.VoidType(), [i8p])
        return cgutils.get_or_insert_function(builder.module, fnty, name), i8p

    @intrinsic
    def mxcsr_get(typingctx):
        def codegen(context, builder, sig, args):
            fn, i8p = _mxcsr_fn(builder, "llvm.x86.sse.stmxcsr")
            slot = cgutils.alloca_once(builder, ir.IntType(32))
            builder.call(fn, [builder.bitcast(slot, i8p)])
            return builder.load(slot)
        return types.uint32(), codegen

    @intrinsic
    def mxcsr_set(typingctx, value):
        def codegen(context, builder, sig, args):
            fn, i8p = _mxcsr_fn(builder, "llvm.x86.sse.ldmxcsr")
            slot = cgutils.alloca_once(builder, ir.IntType(32))
            builder.store(args[0], slot)
            builder.call(fn, [builder.bitcast(slot, i8p)])
            return context.get_dummy_value()
        return types.void(types.uint32), codegen

    HAVE_MXCSR = True
else:  # pragma: no cover
    @numba.njit
    def mxcsr_get():
        return np.uint32(0)

    @numba.njit
    def mxcsr_set(value):
        pass

    HAVE_MXCSR = False
