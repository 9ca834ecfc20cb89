namespace twreh {}
