package corpus;

import java.net.InetAddress;

public class HostResolver {
    public String address(String host) {
        InetAddress addr = InetAddress.getByName(host);
        return addr.getHostAddress();
    }
}
