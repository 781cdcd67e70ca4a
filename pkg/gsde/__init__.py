#
from gsde.version import version as __version__
