from .exchange import ExchangeStrategy, HaloExchanger, exchange
from .pack import pack_halo, slab_slices, slab_volume, unpack_halo
from .transport import InProcessNetwork, InProcessTransport, Mailbox, TcpTransport, Transport
from .wire import HEADER_SIZE, HaloMessage, decode_message, encode_message

__all__ = [
    "ExchangeStrategy", "HaloExchanger", "exchange",
    "pack_halo", "unpack_halo", "slab_slices", "slab_volume",
    "InProcessNetwork", "InProcessTransport", "Mailbox", "TcpTransport", "Transport",
    "HEADER_SIZE", "HaloMessage", "decode_message", "encode_message",
]
