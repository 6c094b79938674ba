"""Stdio denoiser server for ``process`` endpoints::

    python -m drus.denoise_server --kind wavelet
"""

from .denoisers import stdio_main

if __name__ == "__main__":
    stdio_main()
