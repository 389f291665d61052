"""Job-signature toolkit: encode HPC monitoring traces as Gramian angular
field image tensors and classify them with a small CNN, with confidence
thresholded rejection of unknown applications."""

__version__ = "0.1.0"

from .errors import JobsigError  # noqa: F401
