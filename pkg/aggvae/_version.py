from dataclasses import dataclass

__version__ = "0.3.0"


@dataclass
class VersionInfo:
    major: int
    minor: int
    micro: int
    releaselevel: str
    serial: int


version_info = VersionInfo(0, 3, 0, "final", 0)
