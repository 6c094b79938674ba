"""
Plugging in an external denoiser
================================

Any process that speaks the DNZ1/DNZ2 frame protocol over TCP, a Unix
socket or stdin/stdout can serve as the prior. Here a local wavelet
denoiser is served over TCP and gives bit-identical results.
"""

import numpy as np

from drus.denoisers import EndpointSpec, ExternalDenoiser, WaveletDenoiser, start_tcp_server

local = WaveletDenoiser(levels=2)
server, address = start_tcp_server(local)
print("serving on", address)

x = np.random.default_rng(0).standard_normal((64, 32))
with ExternalDenoiser(EndpointSpec("tcp", address, timeout=10)) as remote:
    print("identical to local call:", np.array_equal(remote(x, 0.3), local(x, 0.3)))
server.shutdown()

# %%
# The same protocol over a child process running the bundled wavelet server;
# a neural prior would be wrapped the same way.
import sys

cmd = (sys.executable, "-m", "drus.denoise_server", "--kind", "wavelet")
with ExternalDenoiser(EndpointSpec("process", command=cmd, timeout=30)) as child:
    print("child process result matches:", np.allclose(child(x, 0.3), local(x, 0.3)))
