"""Road-train platooning over a lossy VANET: flooding vs multipoint relays."""

__version__ = "0.1.0"
