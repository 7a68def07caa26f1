"""Twin-beam differential imaging simulator."""
