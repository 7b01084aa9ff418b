"""Answers the first frame with a line longer than any sane move list."""
import sys

for _ in range(4):
    sys.stdin.readline()
print("FloodBot", flush=True)
sys.stdin.readline()
sys.stdout.write("0 " * (1 << 20))
sys.stdout.flush()
sys.stdin.readline()
