# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fetch/decode/execute loop.

Mirrors ``_pykernel.run_kernel`` bit for bit: same decoder subset, same
prefetch-queue and LRU cache model, same cycle accounting and fault arming.
"""

from libc.stdint cimport int64_t, uint32_t, uint64_t

BACKEND = "cython"

cdef enum:
    LINE = 16
    ICACHE_LINES = 64
    FLASH_WAIT = 6

cdef enum:
    HALTED = 0
    DECODE_FAULT = 1
    MEMORY_FAULT = 2
    OUT_OF_IMAGE = 3
    STALE_PREFETCH = 4
    BUDGET = 5

cdef enum:
    OP_NONE = 0
    OP_ADD
    OP_SUB
    OP_CMP
    OP_MOV
    OP_EOR
    OP_LDR
    OP_STR
    OP_B
    OP_NOP
    OP_BKPT


cdef struct Decoded:
    int op
    int rd
    int rn
    int rm
    int cond
    int size
    int setflags
    int64_t imm


cdef inline int64_t sext(int64_t value, int bits) nogil:
    cdef int64_t sign = (<int64_t>1) << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


cdef inline int64_t expand_imm(int imm12) nogil:
    """ThumbExpandImm; -1 for UNPREDICTABLE patterns."""
    cdef uint32_t imm8 = imm12 & 0xFF
    cdef uint32_t unrot
    cdef int rot, kind
    if (imm12 >> 10) == 0:
        kind = (imm12 >> 8) & 3
        if kind == 0:
            return imm8
        if imm8 == 0:
            return -1
        if kind == 1:
            return (imm8 << 16) | imm8
        if kind == 2:
            return (imm8 << 24) | (imm8 << 8)
        return <int64_t>imm8 * 0x01010101
    unrot = 0x80 | (imm12 & 0x7F)
    rot = imm12 >> 7
    return <uint32_t>((unrot >> rot) | (unrot << (32 - rot)))


cdef Decoded decode16(unsigned int hw) nogil:
    cdef Decoded d
    d.op = OP_NONE
    d.rd = 0
    d.rn = 0
    d.rm = 0
    d.cond = -1
    d.size = 2
    d.setflags = 0
    d.imm = 0
    cdef unsigned int top5 = hw >> 11
    if (hw >> 10) == 0b000111:
        d.op = OP_SUB if (hw & 0x0200) else OP_ADD
        d.rd = hw & 7
        d.rn = (hw >> 3) & 7
        d.imm = (hw >> 6) & 7
        d.setflags = 1
    elif top5 == 0b00100:
        d.op = OP_MOV
        d.rd = (hw >> 8) & 7
        d.imm = hw & 0xFF
        d.setflags = 1
    elif top5 == 0b00101:
        d.op = OP_CMP
        d.rn = (hw >> 8) & 7
        d.imm = hw & 0xFF
        d.setflags = 1
    elif top5 == 0b00110 or top5 == 0b00111:
        d.op = OP_ADD if top5 == 0b00110 else OP_SUB
        d.rd = (hw >> 8) & 7
        d.rn = d.rd
        d.imm = hw & 0xFF
        d.setflags = 1
    elif (hw >> 6) == 0b0100000001:
        d.op = OP_EOR
        d.rd = hw & 7
        d.rn = d.rd
        d.rm = (hw >> 3) & 7
        d.setflags = 1
    elif top5 == 0b01100 or top5 == 0b01101:
        d.op = OP_LDR if top5 == 0b01101 else OP_STR
        d.rd = hw & 7
        d.rn = (hw >> 3) & 7
        d.imm = ((hw >> 6) & 0x1F) * 4
    elif (hw >> 12) == 0b1101:
        if ((hw >> 8) & 0xF) < 14:
            d.op = OP_B
            d.cond = (hw >> 8) & 0xF
            d.imm = sext(hw & 0xFF, 8) * 2
    elif top5 == 0b11100:
        d.op = OP_B
        d.imm = sext(hw & 0x7FF, 11) * 2
    elif hw == 0xBF00:
        d.op = OP_NOP
    elif (hw >> 8) == 0xBE:
        d.op = OP_BKPT
    return d


cdef Decoded decode32(unsigned int hw1, unsigned int hw2) nogil:
    cdef Decoded d
    d.op = OP_NONE
    d.rd = 0
    d.rn = 0
    d.rm = 0
    d.cond = -1
    d.size = 4
    d.setflags = 0
    d.imm = 0
    cdef int s, j1, j2, i1, i2, rd, rn, rm, rt, imm12
    cdef int64_t value
    cdef unsigned int masked
    if hw1 == 0xF3AF and hw2 == 0x8000:
        d.op = OP_NOP
        return d
    if (hw1 >> 11) == 0b11110 and (hw2 & 0x8000):
        if hw2 & 0x4000:
            return d
        s = (hw1 >> 10) & 1
        j1 = (hw2 >> 13) & 1
        j2 = (hw2 >> 11) & 1
        if hw2 & 0x1000:
            i1 = 1 ^ j1 ^ s
            i2 = 1 ^ j2 ^ s
            value = ((<int64_t>s << 24) | (<int64_t>i1 << 23) | (<int64_t>i2 << 22)
                     | (<int64_t>(hw1 & 0x3FF) << 12) | ((hw2 & 0x7FF) << 1))
            d.op = OP_B
            d.imm = sext(value, 25)
            return d
        if ((hw1 >> 6) & 0xF) >= 14:
            return d
        value = ((<int64_t>s << 20) | (<int64_t>j2 << 19) | (<int64_t>j1 << 18)
                 | (<int64_t>(hw1 & 0x3F) << 12) | ((hw2 & 0x7FF) << 1))
        d.op = OP_B
        d.cond = (hw1 >> 6) & 0xF
        d.imm = sext(value, 21)
        return d
    rn = hw1 & 0xF
    if (hw1 & 0xFFE0) == 0xF8C0:
        rt = (hw2 >> 12) & 0xF
        if rn == 15 or rt == 15:
            return d
        d.op = OP_LDR if (hw1 & 0x10) else OP_STR
        d.rd = rt
        d.rn = rn
        d.imm = hw2 & 0xFFF
        return d
    if hw2 & 0x8000:
        return d
    rd = (hw2 >> 8) & 0xF
    imm12 = (((hw1 >> 10) & 1) << 11) | (((hw2 >> 12) & 7) << 8) | (hw2 & 0xFF)
    masked = hw1 & 0xFBF0
    if masked == 0xF100 or masked == 0xF1A0:
        value = expand_imm(imm12)
        if value < 0 or rd == 13 or rd == 15 or rn == 15:
            return d
        d.op = OP_ADD if masked == 0xF100 else OP_SUB
        d.rd = rd
        d.rn = rn
        d.imm = value
        return d
    if masked == 0xF1B0 and rd == 15:
        value = expand_imm(imm12)
        if value < 0 or rn == 15:
            return d
        d.op = OP_CMP
        d.rn = rn
        d.imm = value
        d.setflags = 1
        return d
    if (hw1 & 0xFBFF) == 0xF04F:
        value = expand_imm(imm12)
        if value < 0 or rd == 13 or rd == 15:
            return d
        d.op = OP_MOV
        d.rd = rd
        d.imm = value
        return d
    if masked == 0xF200 or masked == 0xF2A0:
        if rd == 13 or rd == 15 or rn == 15:
            return d
        d.op = OP_ADD if masked == 0xF200 else OP_SUB
        d.rd = rd
        d.rn = rn
        d.imm = imm12
        return d
    if masked == 0xF240:
        if rd == 13 or rd == 15:
            return d
        d.op = OP_MOV
        d.rd = rd
        d.imm = ((hw1 & 0xF) << 12) | imm12
        return d
    if (hw1 & 0xFFF0) == 0xEA80 and (hw2 & 0xF0F0) == 0:
        rm = hw2 & 0xF
        if rd == 13 or rd == 15 or rn == 13 or rn == 15 or rm == 13 or rm == 15:
            return d
        d.op = OP_EOR
        d.rd = rd
        d.rn = rn
        d.rm = rm
        return d
    return d


cdef inline bint cond_passed(int cond, uint32_t apsr) nogil:
    cdef int n = (apsr >> 31) & 1
    cdef int z = (apsr >> 30) & 1
    cdef int c = (apsr >> 29) & 1
    cdef int v = (apsr >> 28) & 1
    cdef int base = cond >> 1
    cdef bint ok
    if base == 0:
        ok = z == 1
    elif base == 1:
        ok = c == 1
    elif base == 2:
        ok = n == 1
    elif base == 3:
        ok = v == 1
    elif base == 4:
        ok = c == 1 and z == 0
    elif base == 5:
        ok = n == v
    elif base == 6:
        ok = n == v and z == 0
    else:
        return True
    if cond & 1:
        return not ok
    return ok


cdef class _Machine:
    cdef const unsigned char[::1] image
    cdef unsigned char[::1] ram
    cdef int64_t base, ram_base, image_len, ram_len
    cdef uint32_t regs[16]
    cdef uint32_t apsr
    cdef int64_t cycles
    cdef bint halted
    # prefetch queue: tag line and payload source line (-1 when invalid)
    cdef int64_t pfq_base, pfq_src
    # instruction cache
    cdef bint icache
    cdef int64_t tags[ICACHE_LINES]
    cdef int64_t stamps[ICACHE_LINES]
    cdef int64_t clock
    cdef int64_t refills
    # fault arming
    cdef int64_t arm_cycle
    cdef bint fire, armed_hit
    cdef object target
    cdef list events
    cdef int64_t fault_addr

    def __cinit__(self, const unsigned char[::1] image, int64_t base, unsigned char[::1] ram,
                  int64_t ram_base, bint icache, int64_t arm_cycle, bint fire):
        cdef int i
        self.image = image
        self.ram = ram
        self.base = base
        self.ram_base = ram_base
        self.image_len = image.shape[0]
        self.ram_len = ram.shape[0]
        self.pfq_base = -1
        self.pfq_src = -1
        self.icache = icache
        for i in range(ICACHE_LINES):
            self.tags[i] = -1
            self.stamps[i] = 0
        self.clock = 0
        self.refills = 0
        self.arm_cycle = arm_cycle
        self.fire = fire
        self.armed_hit = False
        self.target = None
        self.events = []
        self.halted = False

    cdef int icache_lookup(self, int64_t line):
        cdef int i
        for i in range(ICACHE_LINES):
            if self.tags[i] == line:
                self.clock += 1
                self.stamps[i] = self.clock
                return 1
        return 0

    cdef void icache_insert(self, int64_t line):
        cdef int i, victim = -1
        cdef int64_t oldest
        for i in range(ICACHE_LINES):
            if self.tags[i] == line:
                victim = i
                break
        if victim < 0:
            for i in range(ICACHE_LINES):
                if self.tags[i] == -1:
                    victim = i
                    break
        if victim < 0:
            victim = 0
            oldest = self.stamps[0]
            for i in range(1, ICACHE_LINES):
                if self.stamps[i] < oldest:
                    oldest = self.stamps[i]
                    victim = i
        self.clock += 1
        self.tags[victim] = line
        self.stamps[victim] = self.clock

    cdef int fetch(self, int64_t pc, int* halfword) except? -2:
        """Serve a halfword; returns wait cycles, or -1 with status in fault_addr path."""
        cdef int64_t line = pc & ~(<int64_t>(LINE - 1))
        cdef int64_t off
        cdef int wait = 0
        cdef bint hit = 0
        cdef bint suppressed = 0
        cdef str kind
        if self.pfq_base != line:
            off = line - self.base
            if off < 0 or off >= self.image_len:
                self.fault_addr = line
                return -OUT_OF_IMAGE
            if self.icache:
                hit = self.icache_lookup(line)
            if not hit:
                wait = FLASH_WAIT
            kind = "RefillFromCache" if hit else "RefillFromFlash"
            if not self.armed_hit and self.arm_cycle >= 0 and self.cycles >= self.arm_cycle:
                self.armed_hit = True
                suppressed = self.fire
                self.target = (kind, line, self.cycles, self.refills, suppressed)
            self.events.append((kind, line, self.cycles, self.refills, suppressed))
            self.refills += 1
            if suppressed:
                self.pfq_base = line
            else:
                if self.icache and not hit:
                    self.icache_insert(line)
                self.pfq_base = line
                self.pfq_src = line
        if self.pfq_src < 0:
            self.fault_addr = pc
            return -STALE_PREFETCH
        off = self.pfq_src - self.base + (pc & (LINE - 1))
        halfword[0] = self.image[off] | (self.image[off + 1] << 8)
        return wait

    cdef int read32(self, int64_t addr, uint32_t* out):
        cdef int64_t off = addr - self.ram_base
        if 0 <= off <= self.ram_len - 4:
            out[0] = (<uint32_t>self.ram[off] | (<uint32_t>self.ram[off + 1] << 8)
                      | (<uint32_t>self.ram[off + 2] << 16) | (<uint32_t>self.ram[off + 3] << 24))
            return 0
        off = addr - self.base
        if 0 <= off <= self.image_len - 4:
            out[0] = (<uint32_t>self.image[off] | (<uint32_t>self.image[off + 1] << 8)
                      | (<uint32_t>self.image[off + 2] << 16) | (<uint32_t>self.image[off + 3] << 24))
            return 0
        self.fault_addr = addr
        return -1

    cdef int write32(self, int64_t addr, uint32_t value):
        cdef int64_t off = addr - self.ram_base
        if 0 <= off <= self.ram_len - 4:
            self.ram[off] = value & 0xFF
            self.ram[off + 1] = (value >> 8) & 0xFF
            self.ram[off + 2] = (value >> 16) & 0xFF
            self.ram[off + 3] = (value >> 24) & 0xFF
            return 0
        self.fault_addr = addr
        return -1

    cdef int run(self, int64_t max_cycles, bint record, list trace) except -1:
        cdef int64_t pc, start, src, next_pc
        cdef int hw1 = 0, hw2 = 0, w
        cdef Decoded d
        cdef uint32_t x, y, result, val
        cdef uint64_t unsigned_sum
        cdef int carry, overflow
        while True:
            if self.cycles >= max_cycles:
                return BUDGET
            pc = self.regs[15]
            start = self.cycles
            w = self.fetch(pc, &hw1)
            if w < 0:
                return -w
            self.cycles += w
            src = self.pfq_src + (pc & (LINE - 1))
            if (hw1 >> 11) >= 0b11101:
                w = self.fetch(pc + 2, &hw2)
                if w < 0:
                    return -w
                self.cycles += w
                d = decode32(hw1, hw2)
            else:
                d = decode16(hw1)
            if d.op == OP_NONE:
                self.fault_addr = pc
                return DECODE_FAULT
            if record:
                trace.append((pc, src, start))
            next_pc = pc + d.size
            if d.op == OP_ADD or d.op == OP_SUB or d.op == OP_CMP:
                x = self.regs[d.rn]
                if d.op == OP_ADD:
                    y = <uint32_t>d.imm
                    unsigned_sum = <uint64_t>x + <uint64_t>y
                else:
                    y = ~(<uint32_t>d.imm)
                    unsigned_sum = <uint64_t>x + <uint64_t>y + 1
                result = <uint32_t>unsigned_sum
                if d.op != OP_CMP:
                    self.regs[d.rd] = result
                if d.setflags:
                    carry = (unsigned_sum >> 32) != 0
                    overflow = (((x ^ result) & (y ^ result)) >> 31) & 1
                    self.apsr = ((result & 0x80000000) | ((result == 0) << 30)
                                 | (carry << 29) | (overflow << 28) | (self.apsr & 0x0FFFFFFF))
            elif d.op == OP_MOV:
                result = <uint32_t>d.imm
                self.regs[d.rd] = result
                if d.setflags:
                    self.apsr = (self.apsr & 0x3FFFFFFF) | (result & 0x80000000) | ((result == 0) << 30)
            elif d.op == OP_EOR:
                result = self.regs[d.rn] ^ self.regs[d.rm]
                self.regs[d.rd] = result
                if d.setflags:
                    self.apsr = (self.apsr & 0x3FFFFFFF) | (result & 0x80000000) | ((result == 0) << 30)
            elif d.op == OP_LDR:
                if self.read32(<uint32_t>(self.regs[d.rn] + <uint32_t>d.imm), &val) < 0:
                    return MEMORY_FAULT
                self.regs[d.rd] = val
            elif d.op == OP_STR:
                if self.write32(<uint32_t>(self.regs[d.rn] + <uint32_t>d.imm), self.regs[d.rd]) < 0:
                    return MEMORY_FAULT
            elif d.op == OP_B:
                if d.cond < 0 or cond_passed(d.cond, self.apsr):
                    next_pc = pc + 4 + d.imm
            elif d.op == OP_BKPT:
                self.halted = True
                next_pc = pc
            self.regs[15] = <uint32_t>next_pc
            self.cycles += 1
            if self.halted:
                return HALTED



def run_kernel(image, int64_t base, regs, uint32_t apsr, int64_t cycles, bytearray ram,
               int64_t ram_base, bint icache, int64_t arm_cycle, bint fire, int64_t max_cycles,
               bint record):
    cdef _Machine m = _Machine(bytes(image), base, ram, ram_base, icache, arm_cycle, fire)
    cdef int i
    for i in range(16):
        m.regs[i] = <uint32_t>(regs[i] & 0xFFFFFFFF)
    m.apsr = apsr
    m.cycles = cycles
    m.fault_addr = 0
    cdef list trace = []
    status = m.run(max_cycles, record, trace)
    return (status, [m.regs[i] for i in range(16)], m.apsr, m.cycles, m.halted, trace,
            m.events, m.target, m.fault_addr if status != HALTED else 0)
